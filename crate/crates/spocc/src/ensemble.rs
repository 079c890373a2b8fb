//! Training and prediction for the possibilistic aggregators: the flat
//! t-norm variant, the adaptive variant with a dependence dendrogram, the
//! discounting rule, hyperparameter tuning and incremental classifier
//! append.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::dendrogram::{execute, hac, Dendrogram, NodeId, Placement};
use crate::error::{Result, SpoccError};
use crate::estimation::{
    build_dissimilarity, conditional_posterior, confusion_matrix, dependence_kappa, error_rate,
    ValidationTable,
};
use crate::par;
use crate::possibility::{
    decide, discount, dpt, lambda_norm, tnorm_combine, LabelSpace, PossibilityDistribution,
    TNormParam, POSSIBILITY_FLOOR,
};
use rand::Rng;

/// Default flat-mode t-norm parameter; T_5 behaves close to the minimum.
pub const DEFAULT_FLAT_LAMBDA: f64 = 5.0;

/// Default dissimilarity threshold for incremental insertion.
pub const DEFAULT_APPEND_THRESHOLD: f64 = 0.5;

/// Default number of cross-validation folds for hyperparameter tuning.
pub const DEFAULT_FOLDS: usize = 5;

/// Discounting exponent: a non-negative real or the symbolic infinity that
/// discards every non-best classifier (pure selection).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rho {
    Finite(f64),
    Infinite,
}

impl Rho {
    pub fn finite(value: f64) -> Result<Self> {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(SpoccError::InvalidParameter(format!(
                "rho must be a non-negative real, got {value}"
            )));
        }
        Ok(Rho::Finite(value))
    }
}

impl Serialize for Rho {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Rho::Finite(x) => s.serialize_f64(*x),
            Rho::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Rho {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(x) => Rho::finite(x).map_err(serde::de::Error::custom),
            Repr::Word(w) if w == "inf" => Ok(Rho::Infinite),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got \"{w}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridScale {
    Linear,
    Logarithmic,
}

/// An ordered hyperparameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    points: Vec<f64>,
    scale: GridScale,
}

impl GridSpec {
    pub fn new(points: Vec<f64>, scale: GridScale) -> Result<Self> {
        if points.len() < 2 {
            return Err(SpoccError::InvalidGrid);
        }
        for w in points.windows(2) {
            if !(w[0] < w[1]) || !w[0].is_finite() || !w[1].is_finite() {
                return Err(SpoccError::InvalidGrid);
            }
        }
        Ok(GridSpec { points, scale })
    }

    /// `n` points spaced evenly in log scale, endpoints exact.
    pub fn logarithmic(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0) || !(hi > lo) || n < 2 {
            return Err(SpoccError::InvalidGrid);
        }
        let (llo, lhi) = (lo.ln(), hi.ln());
        let points = (0..n)
            .map(|i| {
                if i == 0 {
                    lo
                } else if i == n - 1 {
                    hi
                } else {
                    (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp()
                }
            })
            .collect();
        GridSpec::new(points, GridScale::Logarithmic)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn scale(&self) -> GridScale {
        self.scale
    }

    /// 100 logarithmic points on [1e-2, 1e2]; the tuner adds the symbolic
    /// infinity on top.
    pub fn default_rho() -> Self {
        GridSpec::logarithmic(1e-2, 1e2, 100).expect("static bounds")
    }

    /// 100 logarithmic points on [1, 50]; the tuner adds the symbolic
    /// infinity on top. T_50 is numerically indistinguishable from the
    /// minimum at double precision for operands above 1e-3.
    pub fn default_lambda() -> Self {
        GridSpec::logarithmic(1.0, 50.0, 100).expect("static bounds")
    }

    /// 100 logarithmic points on [1e-3, 1e3].
    pub fn default_temperature() -> Self {
        GridSpec::logarithmic(1e-3, 1e3, 100).expect("static bounds")
    }

    /// 100 logarithmic points on [1e-4, 1e2].
    pub fn default_l2() -> Self {
        GridSpec::logarithmic(1e-4, 1e2, 100).expect("static bounds")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    Flat,
    Adaptive,
}

/// A trained possibilistic aggregation model.
///
/// `tables[k][j]` is the conditional possibility distribution of the true
/// label given that classifier `k` predicted label `j`, already discounted
/// by `alphas[k]`. Flat mode combines all rows with `flat_lambda`; adaptive
/// mode executes the dendrogram with the per-node parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpoccModel {
    label_space: LabelSpace,
    mode: ModelMode,
    tables: Vec<Vec<PossibilityDistribution>>,
    alphas: Vec<f64>,
    rho: Rho,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    dendrogram: Option<Dendrogram>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    lambdas: Option<Vec<TNormParam>>,
    flat_lambda: TNormParam,
    error_rates: Vec<f64>,
}

impl SpoccModel {
    pub fn label_space(&self) -> &LabelSpace {
        &self.label_space
    }

    pub fn mode(&self) -> ModelMode {
        self.mode
    }

    pub fn classifier_count(&self) -> usize {
        self.tables.len()
    }

    pub fn tables(&self) -> &[Vec<PossibilityDistribution>] {
        &self.tables
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn rho(&self) -> Rho {
        self.rho
    }

    pub fn dendrogram(&self) -> Option<&Dendrogram> {
        self.dendrogram.as_ref()
    }

    pub fn lambdas(&self) -> Option<&[TNormParam]> {
        self.lambdas.as_deref()
    }

    pub fn flat_lambda(&self) -> TNormParam {
        self.flat_lambda
    }

    pub fn error_rates(&self) -> &[f64] {
        &self.error_rates
    }

    fn gather(&self, preds: &[usize]) -> Result<Vec<PossibilityDistribution>> {
        if preds.len() != self.tables.len() {
            return Err(SpoccError::ColumnCountMismatch {
                expected: self.tables.len(),
                got: preds.len(),
            });
        }
        let labels = self.label_space.count();
        preds
            .iter()
            .enumerate()
            .map(|(k, &j)| {
                if j >= labels {
                    Err(SpoccError::LabelOutOfRange {
                        index: j,
                        count: labels,
                    })
                } else {
                    Ok(self.tables[k][j].clone())
                }
            })
            .collect()
    }

    /// Aggregated possibility distribution for a prediction vector; the
    /// decision is its argmax.
    pub fn aggregate(&self, preds: &[usize]) -> Result<PossibilityDistribution> {
        let rows = self.gather(preds)?;
        match self.mode {
            ModelMode::Flat => tnorm_combine(self.flat_lambda, &rows),
            ModelMode::Adaptive => execute(
                self.dendrogram
                    .as_ref()
                    .expect("adaptive model has a graph"),
                self.lambdas.as_deref().expect("adaptive model has lambdas"),
                &rows,
            ),
        }
    }

    /// Predict a label index from the base classifiers' predictions; ties
    /// are broken uniformly from the supplied stream.
    pub fn predict<R: Rng + ?Sized>(&self, preds: &[usize], rng: &mut R) -> Result<usize> {
        Ok(decide(&self.aggregate(preds)?, rng))
    }
}

/// Conditional possibility tables and validation error rates for every
/// classifier column of the table.
pub fn possibility_tables(
    table: &ValidationTable,
) -> Result<(Vec<Vec<PossibilityDistribution>>, Vec<f64>)> {
    let labels = table.labels();
    let mut tables = Vec::with_capacity(table.classifiers());
    let mut rates = Vec::with_capacity(table.classifiers());
    for k in 0..table.classifiers() {
        let m = confusion_matrix(table, k)?;
        rates.push(error_rate(&m)?);
        let rows: Result<Vec<PossibilityDistribution>> = (0..labels)
            .map(|j| Ok(dpt(&conditional_posterior(&m, j)?)))
            .collect();
        tables.push(rows?);
    }
    Ok((tables, rates))
}

/// Train the flat-mode model: possibility tables from the validation
/// table, no discounting, `flat_lambda` defaulting to T_5.
pub fn train_spocc(table: &ValidationTable) -> Result<SpoccModel> {
    let (tables, error_rates) = possibility_tables(table)?;
    Ok(SpoccModel {
        label_space: table.label_space().clone(),
        mode: ModelMode::Flat,
        alphas: vec![0.0; tables.len()],
        rho: Rho::Finite(0.0),
        dendrogram: None,
        lambdas: None,
        flat_lambda: TNormParam::Finite(DEFAULT_FLAT_LAMBDA),
        tables,
        error_rates,
    })
}

/// Flat-mode prediction.
pub fn predict_spocc<R: Rng + ?Sized>(
    model: &SpoccModel,
    preds: &[usize],
    rng: &mut R,
) -> Result<usize> {
    if model.mode != ModelMode::Flat {
        return Err(SpoccError::ModeMismatch {
            expected: "flat",
            found: "adaptive",
        });
    }
    model.predict(preds, rng)
}

/// Adaptive-mode prediction: computation graph execution then argmax.
pub fn predict_adaspocc<R: Rng + ?Sized>(
    model: &SpoccModel,
    preds: &[usize],
    rng: &mut R,
) -> Result<usize> {
    if model.mode != ModelMode::Adaptive {
        return Err(SpoccError::ModeMismatch {
            expected: "adaptive",
            found: "flat",
        });
    }
    model.predict(preds, rng)
}

/// Discount rates bound together by one exponent:
/// `alpha_k = 1 - ((1 - r_k) / (1 - min r))^rho`.
///
/// The best classifier is never discounted and the rates are monotone in
/// the error rates. When every error rate is 1 the ratio degenerates; by
/// convention the first argmin keeps `alpha = 0` and the rest are fully
/// discounted.
pub fn compute_alphas(error_rates: &[f64], rho: Rho) -> Vec<f64> {
    if error_rates.is_empty() {
        return Vec::new();
    }
    if rho == Rho::Finite(0.0) {
        return vec![0.0; error_rates.len()];
    }
    let r_min = error_rates.iter().fold(f64::INFINITY, |m, &r| m.min(r));
    if r_min >= 1.0 {
        let argmin = error_rates.iter().position(|&r| r == r_min).unwrap();
        return (0..error_rates.len())
            .map(|k| if k == argmin { 0.0 } else { 1.0 })
            .collect();
    }
    error_rates
        .iter()
        .map(|&r| match rho {
            Rho::Infinite => {
                if r == r_min {
                    0.0
                } else {
                    1.0
                }
            }
            Rho::Finite(p) => {
                let ratio = (1.0 - r) / (1.0 - r_min);
                (1.0 - ratio.powf(p)).clamp(0.0, 1.0)
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Expected-accuracy evaluation over grouped validation cells.
//
// Grid searches and cross-validation score an ensemble by its expected
// accuracy under uniform tie-breaking, which is deterministic and free of
// any random stream. Rows are grouped by identical prediction vectors, and
// the aggregation runs in negative-log space where the Aczel-Alsina norm is
// a plain lambda-norm and the decision is an argmin.
// ---------------------------------------------------------------------------

pub(crate) struct Cells {
    entries: Vec<CellEntry>,
    labels: usize,
    total: f64,
}

pub(crate) struct CellEntry {
    preds: Vec<usize>,
    counts: Vec<f64>,
}

pub(crate) fn cells_from_rows(table: &ValidationTable, rows: &[usize]) -> Cells {
    let labels = table.labels();
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut entries: Vec<CellEntry> = Vec::new();
    for &i in rows {
        let preds = table.prediction_row(i).to_vec();
        let slot = *index.entry(preds.clone()).or_insert_with(|| {
            entries.push(CellEntry {
                preds,
                counts: vec![0.0; labels],
            });
            entries.len() - 1
        });
        entries[slot].counts[table.truth(i)] += 1.0;
    }
    Cells {
        entries,
        labels,
        total: rows.len() as f64,
    }
}

pub(crate) fn cells_from_table(table: &ValidationTable) -> Cells {
    let rows: Vec<usize> = (0..table.rows()).collect();
    cells_from_rows(table, &rows)
}

/// Per-classifier, per-predicted-label rows of `-ln` possibility values
/// after discounting; layout `[k][j][y]`, zeros map to infinity.
pub(crate) fn leaf_log_tables(tables: &[Vec<PossibilityDistribution>], alphas: &[f64]) -> Vec<f64> {
    let labels = tables[0].len();
    let mut out = Vec::with_capacity(tables.len() * labels * labels);
    for (k, rows) in tables.iter().enumerate() {
        let alpha = alphas[k];
        for row in rows {
            for &v in row.values() {
                let d = ((1.0 - alpha) * v + alpha).min(1.0);
                out.push(if d < POSSIBILITY_FLOOR {
                    f64::INFINITY
                } else if d >= 1.0 {
                    0.0
                } else {
                    -d.ln()
                });
            }
        }
    }
    out
}

#[inline]
fn combine_log(lambda: TNormParam, a: f64, b: f64) -> f64 {
    match lambda {
        TNormParam::Infinite => a.max(b),
        TNormParam::Finite(l) => {
            if l == 1.0 {
                return a + b;
            }
            if a.is_infinite() || b.is_infinite() {
                return f64::INFINITY;
            }
            let (m, s) = if a >= b { (a, b) } else { (b, a) };
            if m == 0.0 {
                return 0.0;
            }
            m * (1.0 + (s / m).powf(l)).powf(1.0 / l)
        }
    }
}

#[inline]
fn combine_log_many(lambda: TNormParam, ts: &[f64]) -> f64 {
    match lambda {
        TNormParam::Infinite => ts.iter().fold(0.0_f64, |m, &t| m.max(t)),
        TNormParam::Finite(l) => lambda_norm(ts, l),
    }
}

/// Expected accuracy of argmin decisions over negative-log scores, with
/// exact ties counted fractionally.
fn cell_accuracy(cells: &Cells, mut score: impl FnMut(&CellEntry, usize) -> f64) -> f64 {
    let mut correct = 0.0;
    for cell in &cells.entries {
        let scores: Vec<f64> = (0..cells.labels).map(|y| score(cell, y)).collect();
        let best = scores.iter().fold(f64::INFINITY, |m, &s| m.min(s));
        let ties: Vec<usize> = (0..cells.labels).filter(|&y| scores[y] == best).collect();
        let share: f64 = ties.iter().map(|&y| cell.counts[y]).sum::<f64>() / ties.len() as f64;
        correct += share;
    }
    correct / cells.total
}

/// Expected accuracy of the flat combination at one lambda.
pub(crate) fn flat_expected_accuracy(
    cells: &Cells,
    leaf_t: &[f64],
    classifiers: usize,
    lambda: TNormParam,
) -> f64 {
    let labels = cells.labels;
    let stride = labels * labels;
    let mut ts = vec![0.0; classifiers];
    cell_accuracy(cells, |cell, y| {
        for k in 0..classifiers {
            ts[k] = leaf_t[k * stride + cell.preds[k] * labels + y];
        }
        combine_log_many(lambda, &ts)
    })
}

/// Incremental evaluator of the computation graph over grouped cells.
///
/// Changing one node's parameter recomputes only that node and its
/// ancestors, which keeps 1-D grid sweeps cheap.
pub(crate) struct GraphEvaluator<'a> {
    g: &'a Dendrogram,
    lambdas: Vec<TNormParam>,
    cells: &'a Cells,
    leaf_t: &'a [f64],
    node_vals: Vec<f64>,
    paths: Vec<Vec<usize>>,
    post: Vec<usize>,
}

impl<'a> GraphEvaluator<'a> {
    pub(crate) fn new(
        g: &'a Dendrogram,
        lambdas: Vec<TNormParam>,
        cells: &'a Cells,
        leaf_t: &'a [f64],
    ) -> Self {
        let internals = g.internal_count();
        let post = g.post_order();
        let mut paths = Vec::with_capacity(internals);
        for a in 0..internals {
            let mut path = vec![a];
            let mut cur = a;
            while let Some(p) = g.parent_of(NodeId::Internal(cur)) {
                path.push(p);
                cur = p;
            }
            paths.push(path);
        }
        let mut eval = GraphEvaluator {
            g,
            lambdas,
            cells,
            leaf_t,
            node_vals: vec![0.0; cells.entries.len() * internals * cells.labels],
            paths,
            post,
        };
        eval.recompute_all();
        eval
    }

    fn recompute_all(&mut self) {
        for idx in 0..self.post.len() {
            let a = self.post[idx];
            self.recompute_node(a);
        }
    }

    #[inline]
    fn child_value(&self, cell: usize, child: NodeId, y: usize) -> f64 {
        let labels = self.cells.labels;
        match child {
            NodeId::Leaf(k) => {
                let j = self.cells.entries[cell].preds[k];
                self.leaf_t[k * labels * labels + j * labels + y]
            }
            NodeId::Internal(b) => {
                self.node_vals[(cell * self.g.internal_count() + b) * labels + y]
            }
        }
    }

    fn recompute_node(&mut self, a: usize) {
        let labels = self.cells.labels;
        let internals = self.g.internal_count();
        let [lhs, rhs] = self.g.internals()[a].children;
        let lambda = self.lambdas[a];
        for cell in 0..self.cells.entries.len() {
            for y in 0..labels {
                let v = combine_log(
                    lambda,
                    self.child_value(cell, lhs, y),
                    self.child_value(cell, rhs, y),
                );
                self.node_vals[(cell * internals + a) * labels + y] = v;
            }
        }
    }

    pub(crate) fn set_lambda(&mut self, a: usize, lambda: TNormParam) {
        self.lambdas[a] = lambda;
        let path = self.paths[a].clone();
        for node in path {
            self.recompute_node(node);
        }
    }

    pub(crate) fn set_all(&mut self, lambdas: &[TNormParam]) {
        self.lambdas.copy_from_slice(lambdas);
        self.recompute_all();
    }

    pub(crate) fn lambdas(&self) -> &[TNormParam] {
        &self.lambdas
    }

    pub(crate) fn expected_accuracy(&self) -> f64 {
        let labels = self.cells.labels;
        let internals = self.g.internal_count();
        let root = match self.g.root() {
            NodeId::Internal(a) => a,
            NodeId::Leaf(_) => unreachable!("graphs have at least two leaves"),
        };
        let mut correct = 0.0;
        for (idx, cell) in self.cells.entries.iter().enumerate() {
            let scores = &self.node_vals[(idx * internals + root) * labels..][..labels];
            let best = scores.iter().fold(f64::INFINITY, |m, &s| m.min(s));
            let mut ties = 0usize;
            let mut mass = 0.0;
            for (y, &s) in scores.iter().enumerate() {
                if s == best {
                    ties += 1;
                    mass += cell.counts[y];
                }
            }
            correct += mass / ties as f64;
        }
        correct / self.cells.total
    }
}

// ---------------------------------------------------------------------------
// Cross-validation folds and hyperparameter tuning
// ---------------------------------------------------------------------------

/// Deterministic round-robin fold assignment: row `i` tests in fold
/// `i % folds`. A single fold degenerates to in-sample evaluation.
pub(crate) fn cv_folds(n: usize, folds: usize) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if folds == 0 {
        return Err(SpoccError::InvalidParameter("folds must be >= 1".into()));
    }
    if n < folds {
        return Err(SpoccError::TooFewRows { folds, rows: n });
    }
    if folds == 1 {
        let all: Vec<usize> = (0..n).collect();
        return Ok(vec![(all.clone(), all)]);
    }
    Ok((0..folds)
        .map(|f| {
            let test: Vec<usize> = (0..n).filter(|i| i % folds == f).collect();
            let train: Vec<usize> = (0..n).filter(|i| i % folds != f).collect();
            (train, test)
        })
        .collect())
}

fn rho_candidates(grid: &GridSpec) -> Result<Vec<Rho>> {
    let mut candidates: Vec<Rho> = grid
        .points()
        .iter()
        .map(|&p| Rho::finite(p))
        .collect::<Result<_>>()?;
    candidates.push(Rho::Infinite);
    Ok(candidates)
}

fn lambda_candidates(grid: &GridSpec) -> Result<Vec<TNormParam>> {
    let mut candidates: Vec<TNormParam> = grid
        .points()
        .iter()
        .map(|&p| TNormParam::finite(p))
        .collect::<Result<_>>()?;
    candidates.push(TNormParam::Infinite);
    Ok(candidates)
}

enum Topology<'a> {
    Flat(TNormParam),
    Graph(&'a Dendrogram, &'a [TNormParam]),
}

/// Per-fold estimates reused across every grid candidate: conditional
/// tables and error rates from the training part, grouped cells from the
/// held-out part.
struct FoldData {
    tables: Vec<Vec<PossibilityDistribution>>,
    rates: Vec<f64>,
    cells: Cells,
}

fn rho_fold_data(table: &ValidationTable, folds: usize) -> Result<Vec<FoldData>> {
    cv_folds(table.rows(), folds)?
        .into_iter()
        .map(|(train_rows, test_rows)| {
            let train = table.select_rows(&train_rows)?;
            let (tables, rates) = possibility_tables(&train)?;
            Ok(FoldData {
                tables,
                rates,
                cells: cells_from_rows(table, &test_rows),
            })
        })
        .collect()
}

fn rho_accuracy_from(folds: &[FoldData], classifiers: usize, rho: Rho, topology: &Topology) -> f64 {
    let mut sum = 0.0;
    for fold in folds {
        let alphas = compute_alphas(&fold.rates, rho);
        let leaf_t = leaf_log_tables(&fold.tables, &alphas);
        let acc = match topology {
            Topology::Flat(lambda) => {
                flat_expected_accuracy(&fold.cells, &leaf_t, classifiers, *lambda)
            }
            Topology::Graph(g, lambdas) => {
                GraphEvaluator::new(g, lambdas.to_vec(), &fold.cells, &leaf_t).expected_accuracy()
            }
        };
        sum += acc;
    }
    sum / folds.len() as f64
}

/// Mean cross-validated expected accuracy of the ensemble at one discount
/// exponent: per fold, the tables and error rates are re-estimated on the
/// training part and scored on the held-out part.
fn rho_cv_accuracy_with(
    table: &ValidationTable,
    folds: usize,
    rho: Rho,
    topology: &Topology,
) -> Result<f64> {
    let data = rho_fold_data(table, folds)?;
    Ok(rho_accuracy_from(&data, table.classifiers(), rho, topology))
}

/// Cross-validated expected accuracy of the flat T_5 ensemble at one
/// discount exponent (introspection companion of [`tune_rho`]).
pub fn rho_cv_accuracy(table: &ValidationTable, folds: usize, rho: Rho) -> Result<f64> {
    rho_cv_accuracy_with(
        table,
        folds,
        rho,
        &Topology::Flat(TNormParam::Finite(DEFAULT_FLAT_LAMBDA)),
    )
}

fn tune_rho_with(
    table: &ValidationTable,
    grid: &GridSpec,
    folds: usize,
    topology: &Topology,
) -> Result<Rho> {
    let candidates = rho_candidates(grid)?;
    let data = rho_fold_data(table, folds)?;
    let classifiers = table.classifiers();
    let accuracies: Vec<f64> = par::map_slice(&candidates, |&rho| {
        rho_accuracy_from(&data, classifiers, rho, topology)
    });
    let mut best: Option<(Rho, f64)> = None;
    for (rho, acc) in candidates.iter().zip(accuracies) {
        // Strict improvement only: ties keep the smallest exponent.
        if best.is_none() || acc > best.unwrap().1 {
            best = Some((*rho, acc));
        }
    }
    Ok(best.expect("grid has candidates").0)
}

/// Grid-search the discount exponent by cross-validated accuracy of the
/// flat T_5 ensemble; ties prefer the smallest exponent.
pub fn tune_rho(table: &ValidationTable, grid: &GridSpec, folds: usize) -> Result<Rho> {
    tune_rho_with(
        table,
        grid,
        folds,
        &Topology::Flat(TNormParam::Finite(DEFAULT_FLAT_LAMBDA)),
    )
}

// ---------------------------------------------------------------------------
// Heuristic search for the per-node t-norm parameters
// ---------------------------------------------------------------------------

/// Smallest parameter among the internal descendants of `a`, used as the
/// upper bound when searching an ancestor.
fn descendant_cap(g: &Dendrogram, lambdas: &[TNormParam], a: usize) -> TNormParam {
    g.internal_descendants(a)
        .into_iter()
        .fold(TNormParam::Infinite, |cap, b| {
            if lambdas[b] < cap {
                lambdas[b]
            } else {
                cap
            }
        })
}

/// 1-D sweep of one node; ties keep the largest candidate so maximal
/// dependence wins whenever the validation signal cannot separate the
/// plateau (duplicates then aggregate with the idempotent minimum).
fn sweep_node(
    eval: &mut GraphEvaluator,
    a: usize,
    candidates: &[TNormParam],
    cap: TNormParam,
) -> f64 {
    let mut best: Option<(TNormParam, f64)> = None;
    for &cand in candidates.iter().filter(|&&c| c <= cap) {
        eval.set_lambda(a, cand);
        let acc = eval.expected_accuracy();
        if best.is_none() || acc >= best.unwrap().1 {
            best = Some((cand, acc));
        }
    }
    let (lambda, acc) = best.expect("grid contains lambda = 1 which satisfies any cap");
    eval.set_lambda(a, lambda);
    acc
}

/// Joint sweep of a two-node subtree (parent `a`, internal child `c`),
/// restricted to monotone combinations `lambda_a <= lambda_c`; ties keep
/// the lexicographically largest pair.
fn sweep_pair(eval: &mut GraphEvaluator, a: usize, c: usize, candidates: &[TNormParam]) {
    let mut best: Option<(TNormParam, TNormParam, f64)> = None;
    for &lc in candidates {
        eval.set_lambda(c, lc);
        for &la in candidates.iter().filter(|&&x| x <= lc) {
            eval.set_lambda(a, la);
            let acc = eval.expected_accuracy();
            if best.is_none() || acc >= best.unwrap().2 {
                best = Some((lc, la, acc));
            }
        }
    }
    let (lc, la, _) = best.expect("candidates are non-empty");
    eval.set_lambda(c, lc);
    eval.set_lambda(a, la);
}

/// Heuristic search for the dendrogram's t-norm parameters.
///
/// Starting from all parameters at 1, the cluster count is raised from 2 to
/// K. At each level the nodes inside every cluster subtree are grid-searched
/// (jointly for subtrees of at most two internal nodes, sequentially bottom-
/// up otherwise), then the remaining nodes are searched descendants-first
/// under the constraint that an ancestor's parameter cannot exceed any
/// descendant's. The level's validation error is recorded and the loop
/// reverts and stops as soon as it fails to improve.
pub fn heuristic_lambda_search(
    table: &ValidationTable,
    g: &Dendrogram,
    grid: &GridSpec,
) -> Result<Vec<TNormParam>> {
    let k = table.classifiers();
    if g.leaf_count() != k {
        return Err(SpoccError::LengthMismatch(k, g.leaf_count()));
    }
    let candidates = lambda_candidates(grid)?;
    let (tables, _) = possibility_tables(table)?;
    let alphas = vec![0.0; k];
    let leaf_t = leaf_log_tables(&tables, &alphas);
    let cells = cells_from_table(table);
    let init = vec![TNormParam::Finite(1.0); g.internal_count()];
    let mut eval = GraphEvaluator::new(g, init.clone(), &cells, &leaf_t);

    let mut snapshot = init;
    let mut prev_error: Option<f64> = None;
    for n_c in 2..=k {
        let clustering = g.clusters_at(n_c)?;
        let mut treated = vec![false; g.internal_count()];
        for cluster in &clustering.groups {
            let root = match cluster.root {
                NodeId::Internal(a) => a,
                NodeId::Leaf(_) => continue,
            };
            let mut subtree = g.internal_descendants(root);
            subtree.push(root);
            match subtree.len() {
                1 => {
                    sweep_node(&mut eval, root, &candidates, TNormParam::Infinite);
                }
                2 => {
                    let child = subtree[0];
                    sweep_pair(&mut eval, root, child, &candidates);
                }
                _ => {
                    // Bottom-up constrained sweep inside the subtree.
                    for &a in g.post_order().iter().filter(|&&a| subtree.contains(&a)) {
                        let cap = descendant_cap(g, eval.lambdas(), a);
                        sweep_node(&mut eval, a, &candidates, cap);
                    }
                }
            }
            for a in subtree {
                treated[a] = true;
            }
        }
        // Remaining nodes, descendants before ancestors.
        for &a in g.post_order().iter().filter(|&&a| !treated[a]) {
            let cap = descendant_cap(g, eval.lambdas(), a);
            sweep_node(&mut eval, a, &candidates, cap);
        }
        let error = 1.0 - eval.expected_accuracy();
        if n_c >= 3 {
            if let Some(prev) = prev_error {
                if error >= prev {
                    eval.set_all(&snapshot);
                    break;
                }
            }
        }
        prev_error = Some(error);
        snapshot = eval.lambdas().to_vec();
    }
    Ok(eval.lambdas().to_vec())
}

/// Train the adaptive model: flat training, dependence dendrogram, the
/// heuristic parameter search, discount-exponent tuning and discounting of
/// every conditional table. A single classifier falls back to the flat
/// model.
pub fn train_adaspocc(
    table: &ValidationTable,
    lambda_grid: &GridSpec,
    rho_grid: &GridSpec,
    folds: usize,
) -> Result<SpoccModel> {
    if table.classifiers() < 2 {
        return train_spocc(table);
    }
    let (tables, error_rates) = possibility_tables(table)?;
    let dissimilarity = build_dissimilarity(table)?;
    let graph = hac(&dissimilarity)?;
    let lambdas = heuristic_lambda_search(table, &graph, lambda_grid)?;
    let rho = tune_rho_with(table, rho_grid, folds, &Topology::Graph(&graph, &lambdas))?;
    let alphas = compute_alphas(&error_rates, rho);
    let tables = tables
        .iter()
        .enumerate()
        .map(|(k, rows)| {
            rows.iter()
                .map(|pi| discount(pi, alphas[k]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpoccModel {
        label_space: table.label_space().clone(),
        mode: ModelMode::Adaptive,
        tables,
        alphas,
        rho,
        dendrogram: Some(graph),
        lambdas: Some(lambdas),
        flat_lambda: TNormParam::Finite(DEFAULT_FLAT_LAMBDA),
        error_rates,
    })
}

/// Train the adaptive model with the default grids and fold count.
pub fn train_adaspocc_default(table: &ValidationTable) -> Result<SpoccModel> {
    train_adaspocc(
        table,
        &GridSpec::default_lambda(),
        &GridSpec::default_rho(),
        DEFAULT_FOLDS,
    )
}

/// Append classifier `K` (the last column of the extended table) to a
/// trained model without recomputing existing parameters.
///
/// Only the new confusion matrix, the new conditional table, the new row of
/// the dissimilarity matrix and the new leaf placement are computed. When
/// the leaf joins an existing cluster its node inherits that cluster's
/// parameter (the idempotent minimum when the cluster was a single leaf);
/// when it opens a new cluster, exactly one parameter is grid-searched.
/// Existing discount rates are rescaled only if the new classifier becomes
/// the minimum-error member.
pub fn append_classifier(
    model: &SpoccModel,
    table: &ValidationTable,
    threshold: f64,
) -> Result<SpoccModel> {
    let k_old = model.classifier_count();
    if table.classifiers() != k_old + 1 {
        return Err(SpoccError::ColumnCountMismatch {
            expected: k_old + 1,
            got: table.classifiers(),
        });
    }
    if table.label_space() != model.label_space() {
        return Err(SpoccError::InvalidParameter(
            "table label space differs from the model's".into(),
        ));
    }
    let labels = model.label_space().count();
    let new_k = k_old;
    let m = confusion_matrix(table, new_k)?;
    let r_new = error_rate(&m)?;
    let pi_new: Vec<PossibilityDistribution> = (0..labels)
        .map(|j| Ok(dpt(&conditional_posterior(&m, j)?)))
        .collect::<Result<_>>()?;

    let mut error_rates = model.error_rates.clone();
    error_rates.push(r_new);

    match model.mode {
        ModelMode::Flat => {
            let mut tables = model.tables.clone();
            tables.push(pi_new);
            let mut alphas = model.alphas.clone();
            alphas.push(0.0);
            Ok(SpoccModel {
                label_space: model.label_space.clone(),
                mode: ModelMode::Flat,
                tables,
                alphas,
                rho: model.rho,
                dendrogram: None,
                lambdas: None,
                flat_lambda: model.flat_lambda,
                error_rates,
            })
        }
        ModelMode::Adaptive => {
            let g = model.dendrogram.as_ref().expect("adaptive model");
            let old_lambdas = model.lambdas.as_deref().expect("adaptive model");
            let new_dissims: Vec<f64> = (0..k_old)
                .map(|k| Ok(1.0 - dependence_kappa(table, new_k, k)?))
                .collect::<Result<_>>()?;
            let (graph, placement) = g.append_leaf(&new_dissims, threshold)?;

            let alphas = compute_alphas(&error_rates, model.rho);
            let mut tables: Vec<Vec<PossibilityDistribution>> = Vec::with_capacity(k_old + 1);
            for k in 0..k_old {
                if alphas[k] == model.alphas[k] {
                    tables.push(model.tables[k].clone());
                } else {
                    // The new member lowered the minimum error rate: undo the
                    // old discount analytically and apply the new one. A rate
                    // of exactly 1 is not invertible; the vacuous rows it
                    // produced stay vacuous.
                    let old = model.alphas[k];
                    let rows = model.tables[k]
                        .iter()
                        .map(|pi| {
                            let undone: Vec<f64> = if old >= 1.0 {
                                pi.values().to_vec()
                            } else {
                                pi.values()
                                    .iter()
                                    .map(|v| ((v - old) / (1.0 - old)).clamp(0.0, 1.0))
                                    .collect()
                            };
                            discount(&PossibilityDistribution::new(undone)?, alphas[k])
                        })
                        .collect::<Result<Vec<_>>>()?;
                    tables.push(rows);
                }
            }
            let discounted_new: Vec<PossibilityDistribution> = pi_new
                .iter()
                .map(|pi| discount(pi, alphas[new_k]))
                .collect::<Result<_>>()?;
            tables.push(discounted_new);

            let mut lambdas = old_lambdas.to_vec();
            match placement {
                Placement::Joined {
                    inherited_from: Some(a),
                    ..
                } => lambdas.push(old_lambdas[a]),
                Placement::Joined {
                    inherited_from: None,
                    ..
                } => lambdas.push(TNormParam::Infinite),
                Placement::NewCluster { new_internal } => {
                    lambdas.push(TNormParam::Finite(1.0));
                    let candidates = lambda_candidates(&GridSpec::default_lambda())?;
                    let leaf_t = leaf_log_tables(&tables, &vec![0.0; k_old + 1]);
                    let cells = cells_from_table(table);
                    let mut eval = GraphEvaluator::new(&graph, lambdas.clone(), &cells, &leaf_t);
                    let cap = descendant_cap(&graph, eval.lambdas(), new_internal);
                    sweep_node(&mut eval, new_internal, &candidates, cap);
                    lambdas = eval.lambdas().to_vec();
                }
            }

            Ok(SpoccModel {
                label_space: model.label_space.clone(),
                mode: ModelMode::Adaptive,
                tables,
                alphas,
                rho: model.rho,
                dendrogram: Some(graph),
                lambdas: Some(lambdas),
                flat_lambda: model.flat_lambda,
                error_rates,
            })
        }
    }
}
