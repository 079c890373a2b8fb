//! Frequentist estimation from the validation table: confusion matrices,
//! smoothed conditionals, error rates, the pairwise dependence level and
//! classifier rectification.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SpoccError};
use crate::par;
use crate::possibility::{LabelSpace, ProbabilityDistribution};

/// Predictions of `K` classifiers on `n_val` validation examples plus the
/// true labels. This is the sole training input to every aggregator in this
/// crate; column order fixes classifier identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationTable {
    /// Row-major `n_val x K` matrix of predicted label indices.
    predictions: Vec<usize>,
    truths: Vec<usize>,
    classifiers: usize,
    label_space: LabelSpace,
}

impl ValidationTable {
    pub fn new(
        predictions: Vec<Vec<usize>>,
        truths: Vec<usize>,
        label_space: LabelSpace,
    ) -> Result<Self> {
        if predictions.is_empty() {
            return Err(SpoccError::EmptyTable);
        }
        if predictions.len() != truths.len() {
            return Err(SpoccError::LengthMismatch(predictions.len(), truths.len()));
        }
        let classifiers = predictions[0].len();
        if classifiers == 0 {
            return Err(SpoccError::TooFewClassifiers { needed: 1, got: 0 });
        }
        let count = label_space.count();
        let mut flat = Vec::with_capacity(predictions.len() * classifiers);
        for row in &predictions {
            if row.len() != classifiers {
                return Err(SpoccError::LengthMismatch(classifiers, row.len()));
            }
            for &p in row {
                if p >= count {
                    return Err(SpoccError::LabelOutOfRange { index: p, count });
                }
                flat.push(p);
            }
        }
        for &t in &truths {
            if t >= count {
                return Err(SpoccError::LabelOutOfRange { index: t, count });
            }
        }
        Ok(ValidationTable {
            predictions: flat,
            truths,
            classifiers,
            label_space,
        })
    }

    pub fn rows(&self) -> usize {
        self.truths.len()
    }

    pub fn classifiers(&self) -> usize {
        self.classifiers
    }

    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn labels(&self) -> usize {
        self.label_space.count()
    }

    /// Prediction of classifier `k` on row `i`.
    #[inline]
    pub fn prediction(&self, row: usize, k: usize) -> usize {
        self.predictions[row * self.classifiers + k]
    }

    pub fn truth(&self, row: usize) -> usize {
        self.truths[row]
    }

    pub fn truths(&self) -> &[usize] {
        &self.truths
    }

    pub fn prediction_row(&self, row: usize) -> &[usize] {
        let start = row * self.classifiers;
        &self.predictions[start..start + self.classifiers]
    }

    /// New table with an extra prediction column appended.
    pub fn with_column(&self, column: &[usize]) -> Result<Self> {
        if column.len() != self.rows() {
            return Err(SpoccError::LengthMismatch(self.rows(), column.len()));
        }
        let rows: Vec<Vec<usize>> = (0..self.rows())
            .map(|i| {
                let mut row = self.prediction_row(i).to_vec();
                row.push(column[i]);
                row
            })
            .collect();
        ValidationTable::new(rows, self.truths.clone(), self.label_space.clone())
    }

    /// New table keeping only the listed classifier columns, in order.
    pub fn select_columns(&self, keep: &[usize]) -> Result<Self> {
        for &k in keep {
            if k >= self.classifiers {
                return Err(SpoccError::ClassifierOutOfRange {
                    index: k,
                    count: self.classifiers,
                });
            }
        }
        let rows: Vec<Vec<usize>> = (0..self.rows())
            .map(|i| keep.iter().map(|&k| self.prediction(i, k)).collect())
            .collect();
        ValidationTable::new(rows, self.truths.clone(), self.label_space.clone())
    }

    /// Sub-table with the given rows (used for cross-validation folds).
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let predictions: Vec<Vec<usize>> = rows
            .iter()
            .map(|&i| self.prediction_row(i).to_vec())
            .collect();
        let truths: Vec<usize> = rows.iter().map(|&i| self.truths[i]).collect();
        ValidationTable::new(predictions, truths, self.label_space.clone())
    }
}

/// Count matrix of one classifier: row = true label, column = predicted
/// label; entries sum to the number of validation rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<u64>,
    labels: usize,
}

impl ConfusionMatrix {
    pub fn labels(&self) -> usize {
        self.labels
    }

    #[inline]
    pub fn count(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.labels + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn column_total(&self, predicted: usize) -> u64 {
        (0..self.labels).map(|i| self.count(i, predicted)).sum()
    }

    pub fn from_counts(counts: Vec<u64>, labels: usize) -> Result<Self> {
        if counts.len() != labels * labels {
            return Err(SpoccError::LengthMismatch(labels * labels, counts.len()));
        }
        Ok(ConfusionMatrix { counts, labels })
    }
}

/// Confusion matrix of classifier `k` counted over the validation table.
pub fn confusion_matrix(table: &ValidationTable, k: usize) -> Result<ConfusionMatrix> {
    if k >= table.classifiers() {
        return Err(SpoccError::ClassifierOutOfRange {
            index: k,
            count: table.classifiers(),
        });
    }
    let labels = table.labels();
    let mut counts = vec![0u64; labels * labels];
    for i in 0..table.rows() {
        counts[table.truth(i) * labels + table.prediction(i, k)] += 1;
    }
    Ok(ConfusionMatrix { counts, labels })
}

/// Add-one smoothed estimate of the class distribution given that the
/// classifier predicted label `j`:
/// `(count[i][j] + 1) / (column_total(j) + labels)`. Empty columns yield the
/// uniform distribution.
pub fn conditional_posterior(m: &ConfusionMatrix, j: usize) -> Result<ProbabilityDistribution> {
    if j >= m.labels {
        return Err(SpoccError::LabelOutOfRange {
            index: j,
            count: m.labels,
        });
    }
    let denom = (m.column_total(j) + m.labels as u64) as f64;
    let mass = (0..m.labels)
        .map(|i| (m.count(i, j) + 1) as f64 / denom)
        .collect();
    ProbabilityDistribution::new(mass)
}

/// Misclassification rate: off-diagonal mass over the total count.
pub fn error_rate(m: &ConfusionMatrix) -> Result<f64> {
    let total = m.total();
    if total == 0 {
        return Err(SpoccError::EmptyConfusionMatrix);
    }
    let trace: u64 = (0..m.labels).map(|i| m.count(i, i)).sum();
    Ok((total - trace) as f64 / total as f64)
}

/// Dependence level between two classifiers: the likelihood ratio of the
/// independence model over the joint model, mapped to `[0, 1)` by
/// `1 - exp(-|log ratio| / n_val)`. Marginals and joint are add-one smoothed
/// multinomial estimates, and everything stays in log space.
pub fn dependence_kappa(table: &ValidationTable, k: usize, k2: usize) -> Result<f64> {
    kappa_impl(table, k, k2, true)
}

/// Same likelihood-ratio dependence level without smoothing; used to check
/// the smoothed value converges to the analytic one as the table grows.
pub fn dependence_kappa_unsmoothed(table: &ValidationTable, k: usize, k2: usize) -> Result<f64> {
    kappa_impl(table, k, k2, false)
}

fn kappa_impl(table: &ValidationTable, k: usize, k2: usize, smoothed: bool) -> Result<f64> {
    for idx in [k, k2] {
        if idx >= table.classifiers() {
            return Err(SpoccError::ClassifierOutOfRange {
                index: idx,
                count: table.classifiers(),
            });
        }
    }
    if k == k2 {
        return Err(SpoccError::InvalidParameter(
            "dependence level needs two distinct classifiers".into(),
        ));
    }
    // Canonical pair order keeps the value bitwise symmetric.
    let (k, k2) = if k < k2 { (k, k2) } else { (k2, k) };
    let n = table.rows();
    let labels = table.labels();
    let mut marg_k = vec![0u64; labels];
    let mut marg_k2 = vec![0u64; labels];
    let mut joint = vec![0u64; labels * labels];
    for i in 0..n {
        let a = table.prediction(i, k);
        let b = table.prediction(i, k2);
        marg_k[a] += 1;
        marg_k2[b] += 1;
        joint[a * labels + b] += 1;
    }
    let (add, marg_cells, joint_cells) = if smoothed {
        (1.0, labels as f64, (labels * labels) as f64)
    } else {
        (0.0, 0.0, 0.0)
    };
    let n_f = n as f64;
    let marg_denom = (n_f + add * marg_cells).ln();
    let joint_denom = (n_f + add * joint_cells).ln();
    let mut log_l0 = 0.0;
    for j in 0..labels {
        if marg_k[j] > 0 || add > 0.0 {
            let p = (marg_k[j] as f64 + add).ln() - marg_denom;
            log_l0 += marg_k[j] as f64 * p;
        }
        if marg_k2[j] > 0 || add > 0.0 {
            let p = (marg_k2[j] as f64 + add).ln() - marg_denom;
            log_l0 += marg_k2[j] as f64 * p;
        }
    }
    let mut log_l1 = 0.0;
    for c in 0..labels * labels {
        if joint[c] > 0 {
            let p = (joint[c] as f64 + add).ln() - joint_denom;
            log_l1 += joint[c] as f64 * p;
        }
    }
    Ok(1.0 - (-(log_l0 - log_l1).abs() / n_f).exp())
}

/// Symmetric `K x K` classifier dissimilarity matrix with zero diagonal:
/// `d[k][k'] = 1 - kappa(k, k')`, computed once per unordered pair and
/// mirrored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependenceMatrix {
    d: Vec<f64>,
    size: usize,
}

impl DependenceMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn get(&self, k: usize, k2: usize) -> f64 {
        self.d[k * self.size + k2]
    }

    /// Build directly from entries; symmetry and zero diagonal are enforced
    /// by mirroring the upper triangle.
    pub fn from_upper_triangle(size: usize, entries: &[f64]) -> Result<Self> {
        if entries.len() != size * (size - 1) / 2 {
            return Err(SpoccError::LengthMismatch(
                size * (size - 1) / 2,
                entries.len(),
            ));
        }
        let mut d = vec![0.0; size * size];
        let mut it = entries.iter();
        for k in 0..size {
            for k2 in (k + 1)..size {
                let v = *it.next().unwrap();
                d[k * size + k2] = v;
                d[k2 * size + k] = v;
            }
        }
        Ok(DependenceMatrix { d, size })
    }
}

/// Pairwise dissimilarity matrix over all classifiers of the table.
/// Pairs are independent and evaluated in parallel when the `parallel`
/// feature is on.
pub fn build_dissimilarity(table: &ValidationTable) -> Result<DependenceMatrix> {
    let k_count = table.classifiers();
    if k_count < 2 {
        return Err(SpoccError::TooFewClassifiers {
            needed: 2,
            got: k_count,
        });
    }
    let pairs: Vec<(usize, usize)> = (0..k_count)
        .flat_map(|k| ((k + 1)..k_count).map(move |k2| (k, k2)))
        .collect();
    let entries = par::map_slice(&pairs, |&(k, k2)| {
        1.0 - dependence_kappa(table, k, k2).expect("indices valid by construction")
    });
    DependenceMatrix::from_upper_triangle(k_count, &entries)
}

/// Rectification map of a classifier: each predicted label is sent to the
/// most probable true label given that prediction (ties to the lowest
/// index). Composing the map with r the classifier bounds its accuracy above
/// `1/labels` whenever the classifier is informative.
pub fn rectify_map(m: &ConfusionMatrix) -> Vec<usize> {
    (0..m.labels)
        .map(|j| {
            let posterior = conditional_posterior(m, j).expect("j < labels");
            let mut best = 0;
            for i in 1..m.labels {
                if posterior.mass()[i] > posterior.mass()[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}
