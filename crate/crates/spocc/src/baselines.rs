//! The reference aggregators every possibilistic model is compared against:
//! classifier selection, (exponentially) weighted vote, naive Bayes, full
//! Bayes aggregation and stacking. All of them train from the same
//! validation table.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::ensemble::{cv_folds, GridSpec};
use crate::error::{Result, SpoccError};
use crate::estimation::{confusion_matrix, error_rate, ValidationTable};
use crate::optim;
use crate::par;
use crate::possibility::{argmax_set, LabelSpace};

/// Default cell cap for Bayes aggregation; `labels^classifiers` beyond this
/// is refused as intractable rather than attempted.
pub const DEFAULT_BAYES_CELL_CAP: u64 = 10_000_000;

fn pick<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> usize {
    let ties = argmax_set(scores);
    if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.random_range(0..ties.len())]
    }
}

/// Validation accuracies (1 - error rate) of every classifier column.
pub fn validation_accuracies(table: &ValidationTable) -> Result<Vec<f64>> {
    (0..table.classifiers())
        .map(|k| Ok(1.0 - error_rate(&confusion_matrix(table, k)?)?))
        .collect()
}

// ---------------------------------------------------------------------------
// Classifier selection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionModel {
    pub label_space: LabelSpace,
    pub best: usize,
    pub error_rates: Vec<f64>,
}

/// Index of the classifier with the smallest validation error; ties go to
/// the lowest index.
pub fn select_best(table: &ValidationTable) -> Result<usize> {
    let mut best = 0;
    let mut best_rate = f64::INFINITY;
    for k in 0..table.classifiers() {
        let rate = error_rate(&confusion_matrix(table, k)?)?;
        if rate < best_rate {
            best_rate = rate;
            best = k;
        }
    }
    Ok(best)
}

pub fn selection_train(table: &ValidationTable) -> Result<SelectionModel> {
    let error_rates: Vec<f64> = (0..table.classifiers())
        .map(|k| error_rate(&confusion_matrix(table, k)?))
        .collect::<Result<_>>()?;
    Ok(SelectionModel {
        label_space: table.label_space().clone(),
        best: select_best(table)?,
        error_rates,
    })
}

// ---------------------------------------------------------------------------
// Weighted vote
// ---------------------------------------------------------------------------

/// Non-negative per-classifier vote weights; the exponential variant keeps
/// its softmax temperature alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteWeights {
    pub weights: Vec<f64>,
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteModel {
    pub label_space: LabelSpace,
    pub weights: VoteWeights,
}

/// Accuracy-weighted vote: each classifier adds its weight to the label it
/// predicts; ties are broken at random.
pub fn weighted_vote<R: Rng + ?Sized>(
    weights: &[f64],
    preds: &[usize],
    labels: usize,
    rng: &mut R,
) -> usize {
    let mut scores = vec![0.0; labels];
    for (&w, &p) in weights.iter().zip(preds) {
        scores[p] += w;
    }
    pick(&scores, rng)
}

pub fn vote_train(table: &ValidationTable) -> Result<VoteModel> {
    Ok(VoteModel {
        label_space: table.label_space().clone(),
        weights: VoteWeights {
            weights: validation_accuracies(table)?,
            temperature: None,
        },
    })
}

/// Softmax weights over accuracies at a given temperature; weights sum to 1.
/// Large temperatures flatten toward the unweighted vote, small ones
/// saturate onto the most accurate classifier (selection).
pub fn softmax_weights(accuracies: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(SpoccError::InvalidParameter(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    let max = accuracies.iter().fold(f64::NEG_INFINITY, |m, &a| m.max(a));
    let mut weights: Vec<f64> = accuracies
        .iter()
        .map(|&a| ((a - max) / temperature).exp())
        .collect();
    let sum: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= sum);
    Ok(weights)
}

/// Exponentially weighted vote at a given temperature.
pub fn exp_weighted_vote<R: Rng + ?Sized>(
    accuracies: &[f64],
    temperature: f64,
    preds: &[usize],
    labels: usize,
    rng: &mut R,
) -> Result<usize> {
    let weights = softmax_weights(accuracies, temperature)?;
    Ok(weighted_vote(&weights, preds, labels, rng))
}

/// Expected vote accuracy over the table under uniform tie-breaking.
fn vote_expected_accuracy(table: &ValidationTable, rows: &[usize], weights: &[f64]) -> f64 {
    let labels = table.labels();
    let mut correct = 0.0;
    for &i in rows {
        let mut scores = vec![0.0; labels];
        for (k, &w) in weights.iter().enumerate() {
            scores[table.prediction(i, k)] += w;
        }
        let ties = argmax_set(&scores);
        if ties.contains(&table.truth(i)) {
            correct += 1.0 / ties.len() as f64;
        }
    }
    correct / rows.len() as f64
}

/// Cross-validated grid search for the softmax temperature; ties prefer the
/// smallest value.
pub fn tune_temperature(table: &ValidationTable, grid: &GridSpec, folds: usize) -> Result<f64> {
    let splits = cv_folds(table.rows(), folds)?;
    let candidates = grid.points();
    let scores = par::map_slice(candidates, |&tau| {
        let mut sum = 0.0;
        for (train_rows, test_rows) in &splits {
            let train = table.select_rows(train_rows).expect("rows valid");
            let accs = validation_accuracies(&train).expect("non-empty train fold");
            let weights = softmax_weights(&accs, tau).expect("tau > 0");
            sum += vote_expected_accuracy(table, test_rows, &weights);
        }
        sum / splits.len() as f64
    });
    let mut best = (candidates[0], f64::NEG_INFINITY);
    for (&tau, &acc) in candidates.iter().zip(&scores) {
        if acc > best.1 {
            best = (tau, acc);
        }
    }
    Ok(best.0)
}

pub fn exp_vote_train(table: &ValidationTable, grid: &GridSpec, folds: usize) -> Result<VoteModel> {
    let temperature = tune_temperature(table, grid, folds)?;
    let accuracies = validation_accuracies(table)?;
    Ok(VoteModel {
        label_space: table.label_space().clone(),
        weights: VoteWeights {
            weights: softmax_weights(&accuracies, temperature)?,
            temperature: Some(temperature),
        },
    })
}

// ---------------------------------------------------------------------------
// Naive Bayes aggregation
// ---------------------------------------------------------------------------

/// Factorized aggregation: class prior times the product of per-classifier
/// prediction likelihoods, all add-one smoothed, evaluated in log space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub label_space: LabelSpace,
    log_prior: Vec<f64>,
    /// `[k][j][y]`: log p(classifier k predicts j | class y).
    log_conditional: Vec<f64>,
    classifiers: usize,
}

impl NaiveBayesModel {
    pub fn classifier_count(&self) -> usize {
        self.classifiers
    }
}

pub fn naive_bayes_train(table: &ValidationTable) -> Result<NaiveBayesModel> {
    let labels = table.labels();
    let k_count = table.classifiers();
    let n = table.rows();
    let mut class_counts = vec![0u64; labels];
    for i in 0..n {
        class_counts[table.truth(i)] += 1;
    }
    let log_prior: Vec<f64> = class_counts
        .iter()
        .map(|&c| ((c + 1) as f64 / (n as f64 + labels as f64)).ln())
        .collect();
    let mut log_conditional = vec![0.0; k_count * labels * labels];
    for k in 0..k_count {
        let m = confusion_matrix(table, k)?;
        for y in 0..labels {
            let denom = class_counts[y] as f64 + labels as f64;
            for j in 0..labels {
                log_conditional[(k * labels + j) * labels + y] =
                    ((m.count(y, j) + 1) as f64 / denom).ln();
            }
        }
    }
    Ok(NaiveBayesModel {
        label_space: table.label_space().clone(),
        log_prior,
        log_conditional,
        classifiers: k_count,
    })
}

/// Normalized posterior over classes for one prediction vector.
pub fn naive_bayes_posterior(model: &NaiveBayesModel, preds: &[usize]) -> Result<Vec<f64>> {
    let labels = model.label_space.count();
    if preds.len() != model.classifiers {
        return Err(SpoccError::ColumnCountMismatch {
            expected: model.classifiers,
            got: preds.len(),
        });
    }
    let mut log_scores = model.log_prior.clone();
    for (k, &j) in preds.iter().enumerate() {
        if j >= labels {
            return Err(SpoccError::LabelOutOfRange {
                index: j,
                count: labels,
            });
        }
        for (y, score) in log_scores.iter_mut().enumerate() {
            *score += model.log_conditional[(k * labels + j) * labels + y];
        }
    }
    let max = log_scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
    let mut posterior: Vec<f64> = log_scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = posterior.iter().sum();
    posterior.iter_mut().for_each(|p| *p /= sum);
    Ok(posterior)
}

pub fn naive_bayes_predict<R: Rng + ?Sized>(
    model: &NaiveBayesModel,
    preds: &[usize],
    rng: &mut R,
) -> Result<usize> {
    Ok(pick(&naive_bayes_posterior(model, preds)?, rng))
}

// ---------------------------------------------------------------------------
// Bayes aggregation
// ---------------------------------------------------------------------------

/// Per-cell class posterior over the full prediction-vector space
/// (`labels^classifiers` cells), add-one smoothed. Counts are stored
/// sparsely; unseen cells fall back to the uniform smoothed prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesAggModel {
    pub label_space: LabelSpace,
    classifiers: usize,
    #[serde(with = "cell_counts")]
    counts: BTreeMap<u64, Vec<u64>>,
}

/// Cell counts serialize as an ordered list of `[cell_key, counts]` pairs.
mod cell_counts {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        map: &BTreeMap<u64, Vec<u64>>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let pairs: Vec<(&u64, &Vec<u64>)> = map.iter().collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<u64, Vec<u64>>, D::Error> {
        let pairs: Vec<(u64, Vec<u64>)> = Vec::deserialize(d)?;
        Ok(pairs.into_iter().collect())
    }
}

impl BayesAggModel {
    pub fn classifier_count(&self) -> usize {
        self.classifiers
    }
}

fn cell_key(preds: &[usize], labels: usize) -> u64 {
    let mut key = 0u64;
    for &p in preds.iter().rev() {
        key = key * labels as u64 + p as u64;
    }
    key
}

pub fn bayes_agg_train(table: &ValidationTable, memory_cap: u64) -> Result<BayesAggModel> {
    let labels = table.labels();
    let k_count = table.classifiers();
    let cells = (labels as u128).checked_pow(k_count as u32);
    match cells {
        Some(c) if c <= memory_cap as u128 => {}
        _ => {
            return Err(SpoccError::Intractable {
                labels,
                classifiers: k_count,
                cells: cells.unwrap_or(u128::MAX),
                cap: memory_cap,
            })
        }
    }
    let mut counts: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    for i in 0..table.rows() {
        let key = cell_key(table.prediction_row(i), labels);
        counts.entry(key).or_insert_with(|| vec![0; labels])[table.truth(i)] += 1;
    }
    Ok(BayesAggModel {
        label_space: table.label_space().clone(),
        classifiers: k_count,
        counts,
    })
}

/// Add-one smoothed class posterior of the cell addressed by `preds`.
pub fn bayes_agg_posterior(model: &BayesAggModel, preds: &[usize]) -> Result<Vec<f64>> {
    let labels = model.label_space.count();
    if preds.len() != model.classifiers {
        return Err(SpoccError::ColumnCountMismatch {
            expected: model.classifiers,
            got: preds.len(),
        });
    }
    for &p in preds {
        if p >= labels {
            return Err(SpoccError::LabelOutOfRange {
                index: p,
                count: labels,
            });
        }
    }
    let key = cell_key(preds, labels);
    let empty;
    let cell = match model.counts.get(&key) {
        Some(c) => c,
        None => {
            empty = vec![0; labels];
            &empty
        }
    };
    let total: u64 = cell.iter().sum();
    let denom = total as f64 + labels as f64;
    Ok(cell.iter().map(|&c| (c + 1) as f64 / denom).collect())
}

pub fn bayes_agg_predict<R: Rng + ?Sized>(
    model: &BayesAggModel,
    preds: &[usize],
    rng: &mut R,
) -> Result<usize> {
    Ok(pick(&bayes_agg_posterior(model, preds)?, rng))
}

// ---------------------------------------------------------------------------
// Stacking
// ---------------------------------------------------------------------------

/// Softmax regression over the concatenated one-hot encodings of the base
/// predictions, with an l2 penalty chosen by cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackingModel {
    pub label_space: LabelSpace,
    /// `(classifiers * labels + 1) x labels` coefficients, bias row last.
    pub coefficients: Vec<f64>,
    pub l2: f64,
    pub converged: bool,
    classifiers: usize,
}

impl StackingModel {
    pub fn classifier_count(&self) -> usize {
        self.classifiers
    }
}

fn one_hot_rows(table: &ValidationTable, rows: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let labels = table.labels();
    let k_count = table.classifiers();
    let dim = k_count * labels;
    let mut xs = vec![0.0; rows.len() * dim];
    let mut ys = Vec::with_capacity(rows.len());
    for (r, &i) in rows.iter().enumerate() {
        for k in 0..k_count {
            xs[r * dim + k * labels + table.prediction(i, k)] = 1.0;
        }
        ys.push(table.truth(i));
    }
    (xs, ys)
}

fn one_hot_single(preds: &[usize], labels: usize) -> Vec<f64> {
    let mut x = vec![0.0; preds.len() * labels];
    for (k, &j) in preds.iter().enumerate() {
        x[k * labels + j] = 1.0;
    }
    x
}

pub fn stacking_train(
    table: &ValidationTable,
    l2_grid: &GridSpec,
    folds: usize,
) -> Result<StackingModel> {
    let labels = table.labels();
    let dim = table.classifiers() * labels;
    let splits = cv_folds(table.rows(), folds)?;
    // Per fold, sweep the penalty grid from the heavily regularized end
    // down, warm-starting each fit from its neighbour; inner fits run at a
    // looser budget than the final model. Scores are expected accuracy on
    // the held-out part.
    const CV_GRAD_TOL: f64 = 1e-4;
    const CV_MAX_ITERS: usize = 2000;
    let fold_scores: Vec<Vec<f64>> = par::map_slice(&splits, |(train_rows, test_rows)| {
        let (xs, ys) = one_hot_rows(table, train_rows);
        let mut warm: Option<Vec<f64>> = None;
        let mut scores = vec![0.0; l2_grid.points().len()];
        for (idx, &l2) in l2_grid.points().iter().enumerate().rev() {
            let fit = optim::fit_with(
                &xs,
                &ys,
                dim,
                labels,
                l2,
                warm.as_deref(),
                CV_GRAD_TOL,
                CV_MAX_ITERS,
            );
            let mut correct = 0.0;
            for &i in test_rows {
                let x = one_hot_single(table.prediction_row(i), labels);
                let s = optim::softmax_scores(&fit.weights, dim, labels, &x);
                let ties = argmax_set(&s);
                if ties.contains(&table.truth(i)) {
                    correct += 1.0 / ties.len() as f64;
                }
            }
            scores[idx] = correct / test_rows.len() as f64;
            warm = Some(fit.weights);
        }
        scores
    });
    let mut best = (l2_grid.points()[0], f64::NEG_INFINITY);
    for (idx, &l2) in l2_grid.points().iter().enumerate() {
        let mean: f64 = fold_scores.iter().map(|s| s[idx]).sum::<f64>() / fold_scores.len() as f64;
        if mean > best.1 {
            best = (l2, mean);
        }
    }
    let all_rows: Vec<usize> = (0..table.rows()).collect();
    let (xs, ys) = one_hot_rows(table, &all_rows);
    let fit = optim::fit(&xs, &ys, dim, labels, best.0, None);
    Ok(StackingModel {
        label_space: table.label_space().clone(),
        coefficients: fit.weights,
        l2: best.0,
        converged: fit.converged,
        classifiers: table.classifiers(),
    })
}

/// Linear scores of the stacking model for one prediction vector.
pub fn stacking_scores(model: &StackingModel, preds: &[usize]) -> Result<Vec<f64>> {
    let labels = model.label_space.count();
    if preds.len() != model.classifiers {
        return Err(SpoccError::ColumnCountMismatch {
            expected: model.classifiers,
            got: preds.len(),
        });
    }
    for &p in preds {
        if p >= labels {
            return Err(SpoccError::LabelOutOfRange {
                index: p,
                count: labels,
            });
        }
    }
    let x = one_hot_single(preds, labels);
    Ok(optim::softmax_scores(
        &model.coefficients,
        model.classifiers * labels,
        labels,
        &x,
    ))
}

pub fn stacking_predict<R: Rng + ?Sized>(
    model: &StackingModel,
    preds: &[usize],
    rng: &mut R,
) -> Result<usize> {
    Ok(pick(&stacking_scores(model, preds)?, rng))
}
