//! Experiment driver: the robustness scenarios (adversaries, faults,
//! redundancy, heterogeneous ensembles, class imbalance), dynamic test
//! sampling with exact Clopper-Pearson stopping, bootstrap confidence
//! intervals and CSV/JSON report emission.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use crate::baselines::{
    bayes_agg_posterior, bayes_agg_train, exp_vote_train, naive_bayes_posterior, naive_bayes_train,
    selection_train, stacking_scores, stacking_train, vote_train, BayesAggModel, NaiveBayesModel,
    SelectionModel, StackingModel, VoteModel, DEFAULT_BAYES_CELL_CAP,
};
use crate::ensemble::{train_adaspocc, train_spocc, GridSpec, SpoccModel, DEFAULT_FOLDS};
use crate::error::{Result, SpoccError};
use crate::estimation::ValidationTable;
use crate::par;
use crate::possibility::argmax_set;
use crate::stats::{bootstrap_ci, clopper_pearson_half_width, std_dev};
use crate::synth::{
    calibrate_half_side, generate, optimal_rule, perturb_column, perturb_label, sample_point,
    split_overlapping, train_depth2_tree, train_knn, train_logistic, BaseClassifier,
    GaussianQuadrantConfig, PerturbKind, PerturbationSpec,
};

/// Test points are drawn in batches of this size between interval checks.
pub const TEST_BATCH: usize = 1000;

/// Hard cap on dynamically sampled test points; hitting it sets the
/// truncation flag instead of looping forever.
pub const TEST_CAP: usize = 1_000_000;

/// Reference optimal accuracy the square half-side is calibrated against.
pub const TARGET_OPTIMAL_ACCURACY: f64 = 0.8752;

/// Stop sampling once every tracked accuracy's exact binomial interval is
/// at most this half-width, at the given confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub confidence: f64,
    pub half_width: f64,
}

impl Default for StoppingRule {
    fn default() -> Self {
        StoppingRule {
            confidence: 0.95,
            half_width: 0.002,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Adversary,
    Fault,
    Redundancy,
    Heterogeneous,
    Imbalance,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::Adversary => "adversary",
            Scenario::Fault => "fault",
            Scenario::Redundancy => "redundancy",
            Scenario::Heterogeneous => "heterogeneous",
            Scenario::Imbalance => "imbalance",
        }
    }
}

impl std::str::FromStr for Scenario {
    type Err = SpoccError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adversary" => Ok(Scenario::Adversary),
            "fault" => Ok(Scenario::Fault),
            "redundancy" => Ok(Scenario::Redundancy),
            "heterogeneous" => Ok(Scenario::Heterogeneous),
            "imbalance" => Ok(Scenario::Imbalance),
            other => Err(SpoccError::InvalidParameter(format!(
                "unknown scenario `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Selection,
    Vote,
    ExpVote,
    Stacking,
    NaiveBayes,
    Bayes,
    Spocc,
    AdaSpocc,
    BestBase,
    Optimal,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Selection => "selection",
            Method::Vote => "vote",
            Method::ExpVote => "exp-vote",
            Method::Stacking => "stacking",
            Method::NaiveBayes => "naive-bayes",
            Method::Bayes => "bayes",
            Method::Spocc => "spocc",
            Method::AdaSpocc => "adaspocc",
            Method::BestBase => "best-base",
            Method::Optimal => "optimal",
        }
    }

    pub fn all() -> Vec<Method> {
        vec![
            Method::Selection,
            Method::Vote,
            Method::ExpVote,
            Method::Stacking,
            Method::NaiveBayes,
            Method::Bayes,
            Method::Spocc,
            Method::AdaSpocc,
            Method::BestBase,
            Method::Optimal,
        ]
    }
}

impl std::str::FromStr for Method {
    type Err = SpoccError;
    fn from_str(s: &str) -> Result<Self> {
        Method::all()
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| SpoccError::InvalidParameter(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Swept perturbation counts, or imbalance steps (value v means
    /// beta = 0.05 * v, so only 1..=10 are valid there).
    pub sweep: Vec<u32>,
    pub replicates: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub stopping: StoppingRule,
    pub n_train: usize,
    pub folds: usize,
    pub bayes_cell_cap: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: Scenario::Redundancy,
            sweep: (0..=8).collect(),
            replicates: 100,
            methods: Method::all(),
            seed: 0,
            stopping: StoppingRule::default(),
            n_train: 200,
            folds: DEFAULT_FOLDS,
            bayes_cell_cap: DEFAULT_BAYES_CELL_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportStatus {
    Ok,
    Intractable,
}

/// Accuracy summary of one method at one sweep value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: String,
    pub sweep: f64,
    pub samples: Vec<f64>,
    pub mean: f64,
    pub ci_half_width: f64,
    pub std_dev: f64,
    /// Successes over trials pooled across replicates; the confusion
    /// diagonal weighted by `class_weights` reproduces it exactly.
    pub pooled_accuracy: f64,
    /// Row-normalized pooled confusion matrix, row-major true x predicted.
    pub confusion: Vec<f64>,
    /// Pooled true-class frequencies (the confusion row weights).
    pub class_weights: Vec<f64>,
    pub labels: Vec<String>,
    pub seeds: Vec<u64>,
    pub truncated_replicates: usize,
    pub status: ReportStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub scenario: String,
    pub reports: Vec<ExperimentReport>,
}

/// Calibrated square half-side reproducing the reference optimal accuracy;
/// computed once per process.
pub fn calibrated_half_side() -> f64 {
    static HALF_SIDE: OnceLock<f64> = OnceLock::new();
    *HALF_SIDE.get_or_init(|| {
        calibrate_half_side(TARGET_OPTIMAL_ACCURACY).expect("reference target is in range")
    })
}

// ---------------------------------------------------------------------------
// Dynamic test sampling
// ---------------------------------------------------------------------------

/// Accuracy and confusion tally of one tracked prediction series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTally {
    pub name: String,
    /// Whether this series participates in the stopping conjunction.
    pub governs: bool,
    pub successes: u64,
    pub trials: u64,
    pub confusion: Vec<u64>,
    labels: usize,
}

impl SeriesTally {
    pub fn new(name: impl Into<String>, labels: usize, governs: bool) -> Self {
        SeriesTally {
            name: name.into(),
            governs,
            successes: 0,
            trials: 0,
            confusion: vec![0; labels * labels],
            labels,
        }
    }

    pub fn accuracy(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleOutcome {
    pub points: usize,
    pub truncated: bool,
}

/// Sample test points in batches until every governing series' exact
/// Clopper-Pearson interval is narrow enough, or the cap is hit.
///
/// `predict_all` fills one predicted label per series for the given point
/// and truth; it may consume the random stream (perturbations, tie
/// breaks).
pub fn dynamic_test_sample<R, F>(
    config: &GaussianQuadrantConfig,
    rule: &StoppingRule,
    series: &mut [SeriesTally],
    rng: &mut R,
    mut predict_all: F,
) -> SampleOutcome
where
    R: Rng + ?Sized,
    F: FnMut([f64; 2], usize, &mut R, &mut [usize]),
{
    assert!(!series.is_empty(), "at least one predictor required");
    let labels = series[0].labels;
    let mut preds = vec![0usize; series.len()];
    let mut points = 0usize;
    loop {
        for _ in 0..TEST_BATCH {
            let (x, truth) = sample_point(config, rng);
            predict_all(x, truth, rng, &mut preds);
            for (tally, &p) in series.iter_mut().zip(&preds) {
                tally.trials += 1;
                if p == truth {
                    tally.successes += 1;
                }
                tally.confusion[truth * labels + p] += 1;
            }
            points += 1;
        }
        let done = series.iter().filter(|s| s.governs).all(|s| {
            clopper_pearson_half_width(s.successes, s.trials, rule.confidence) <= rule.half_width
        });
        if done {
            return SampleOutcome {
                points,
                truncated: false,
            };
        }
        if points >= TEST_CAP {
            return SampleOutcome {
                points,
                truncated: true,
            };
        }
    }
}

// ---------------------------------------------------------------------------
// Per-replicate pipeline
// ---------------------------------------------------------------------------

enum TrainedAggregator {
    Selection(SelectionModel),
    Vote(VoteModel),
    ExpVote(VoteModel),
    Stacking(StackingModel),
    NaiveBayes(NaiveBayesModel),
    Bayes(BayesAggModel),
    Spocc(SpoccModel),
    AdaSpocc(SpoccModel),
}

impl TrainedAggregator {
    /// Deterministic argmax set for a prediction vector; the caller breaks
    /// ties with its own stream.
    fn decision_set(&self, preds: &[usize], labels: usize) -> Vec<usize> {
        match self {
            TrainedAggregator::Selection(m) => vec![preds[m.best]],
            TrainedAggregator::Vote(m) | TrainedAggregator::ExpVote(m) => {
                let mut scores = vec![0.0; labels];
                for (&w, &p) in m.weights.weights.iter().zip(preds) {
                    scores[p] += w;
                }
                argmax_set(&scores)
            }
            TrainedAggregator::Stacking(m) => {
                argmax_set(&stacking_scores(m, preds).expect("validated shapes"))
            }
            TrainedAggregator::NaiveBayes(m) => {
                argmax_set(&naive_bayes_posterior(m, preds).expect("validated shapes"))
            }
            TrainedAggregator::Bayes(m) => {
                argmax_set(&bayes_agg_posterior(m, preds).expect("validated shapes"))
            }
            TrainedAggregator::Spocc(m) | TrainedAggregator::AdaSpocc(m) => {
                argmax_set(m.aggregate(preds).expect("validated shapes").values())
            }
        }
    }
}

struct MethodSample {
    accuracy: f64,
    trials: u64,
    confusion: Vec<u64>,
    truncated: bool,
    status: ReportStatus,
}

fn train_aggregator(
    method: Method,
    table: &ValidationTable,
    folds: usize,
    bayes_cap: u64,
) -> Result<Option<TrainedAggregator>> {
    Ok(Some(match method {
        Method::Selection => TrainedAggregator::Selection(selection_train(table)?),
        Method::Vote => TrainedAggregator::Vote(vote_train(table)?),
        Method::ExpVote => TrainedAggregator::ExpVote(exp_vote_train(
            table,
            &GridSpec::default_temperature(),
            folds,
        )?),
        Method::Stacking => {
            TrainedAggregator::Stacking(stacking_train(table, &GridSpec::default_l2(), folds)?)
        }
        Method::NaiveBayes => TrainedAggregator::NaiveBayes(naive_bayes_train(table)?),
        Method::Bayes => match bayes_agg_train(table, bayes_cap) {
            Ok(m) => TrainedAggregator::Bayes(m),
            Err(SpoccError::Intractable { .. }) => return Ok(None),
            Err(e) => return Err(e),
        },
        Method::Spocc => TrainedAggregator::Spocc(train_spocc(table)?),
        Method::AdaSpocc => TrainedAggregator::AdaSpocc(train_adaspocc(
            table,
            &GridSpec::default_lambda(),
            &GridSpec::default_rho(),
            folds,
        )?),
        Method::BestBase | Method::Optimal => unreachable!("not trained from the table"),
    }))
}

fn run_replicate(
    config: &ExperimentConfig,
    sweep_value: u32,
    seed: u64,
) -> Result<Vec<MethodSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = match config.scenario {
        Scenario::Imbalance => 0.05 * sweep_value as f64,
        _ => 0.5,
    };
    let gen_config = GaussianQuadrantConfig {
        half_side: calibrated_half_side(),
        sigma: 1.0,
        n: config.n_train,
        beta,
    };
    let labels = 2usize;
    let data = generate(&gen_config, &mut rng);
    let subsets = split_overlapping(&data);

    // Global 80/20 split: every point is train or validation once; each
    // base classifier trains on its subset's training part and the
    // aggregators see the full validation part.
    let val_mask: Vec<bool> = (0..data.len()).map(|_| rng.random::<f64>() < 0.2).collect();
    let heterogeneous = config.scenario == Scenario::Heterogeneous;
    let bases: Vec<BaseClassifier> = subsets
        .iter()
        .enumerate()
        .map(|(k, subset)| {
            let train_idx: Vec<usize> = subset.iter().copied().filter(|&i| !val_mask[i]).collect();
            let points: Vec<[f64; 2]> = train_idx.iter().map(|&i| data.points[i]).collect();
            let labels_vec: Vec<usize> = train_idx.iter().map(|&i| data.labels[i]).collect();
            if heterogeneous {
                match k {
                    0 => train_logistic(&points, &labels_vec, labels, 1.0),
                    1 => train_knn(&points, &labels_vec, labels, 5),
                    _ => train_depth2_tree(&points, &labels_vec, labels),
                }
            } else {
                train_depth2_tree(&points, &labels_vec, labels)
            }
        })
        .collect();

    let val_rows: Vec<usize> = (0..data.len()).filter(|&i| val_mask[i]).collect();
    if val_rows.is_empty() {
        return Err(SpoccError::EmptyTable);
    }
    let truths: Vec<usize> = val_rows.iter().map(|&i| data.labels[i]).collect();
    let mut columns: Vec<Vec<usize>> = bases
        .iter()
        .map(|b| {
            val_rows
                .iter()
                .map(|&i| b.predict(data.points[i]))
                .collect()
        })
        .collect();

    let perturbation = match config.scenario {
        Scenario::Adversary => Some(PerturbationSpec {
            kind: PerturbKind::Adversarial,
            theta: 0.5,
            source: 0,
            copies: sweep_value as usize,
        }),
        Scenario::Fault => Some(PerturbationSpec {
            kind: PerturbKind::Fault,
            theta: 0.9,
            source: 0,
            copies: sweep_value as usize,
        }),
        Scenario::Redundancy | Scenario::Heterogeneous => Some(PerturbationSpec {
            kind: PerturbKind::Clone,
            theta: 0.0,
            source: 0,
            copies: sweep_value as usize,
        }),
        Scenario::Imbalance => None,
    };
    if let Some(spec) = perturbation {
        for _ in 0..spec.copies {
            let column = perturb_column(
                &columns[spec.source],
                spec.kind,
                spec.theta,
                labels,
                &mut rng,
            );
            columns.push(column);
        }
    }

    let rows: Vec<Vec<usize>> = (0..truths.len())
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect();
    let table = ValidationTable::new(rows, truths, data.label_space.clone())?;

    // Train the requested aggregators; Bayes may refuse as intractable.
    let mut aggregators: Vec<(Method, Option<TrainedAggregator>)> = Vec::new();
    for &method in &config.methods {
        if matches!(method, Method::BestBase | Method::Optimal) {
            continue;
        }
        aggregators.push((
            method,
            train_aggregator(method, &table, config.folds, config.bayes_cell_cap)?,
        ));
    }
    let track_best_base = config.methods.contains(&Method::BestBase);
    let track_optimal = config.methods.contains(&Method::Optimal);

    // Series order: trained aggregators, then the optimal rule, then each
    // base classifier.
    let mut series: Vec<SeriesTally> = Vec::new();
    for (method, trained) in &aggregators {
        if trained.is_some() {
            series.push(SeriesTally::new(method.name(), labels, true));
        }
    }
    if track_optimal {
        series.push(SeriesTally::new("optimal", labels, true));
    }
    if track_best_base {
        for k in 0..bases.len() {
            series.push(SeriesTally::new(format!("base-{k}"), labels, true));
        }
    }

    let trained: Vec<(usize, &TrainedAggregator)> = aggregators
        .iter()
        .filter_map(|(_, t)| t.as_ref())
        .enumerate()
        .collect();
    let mut caches: Vec<HashMap<u64, Vec<usize>>> =
        trained.iter().map(|_| HashMap::new()).collect();
    let k_total = columns.len();
    let mut base_preds = vec![0usize; k_total];

    let outcome = dynamic_test_sample(
        &gen_config,
        &config.stopping,
        &mut series,
        &mut rng,
        |x, _truth, rng, out| {
            for (k, base) in bases.iter().enumerate() {
                base_preds[k] = base.predict(x);
            }
            if let Some(spec) = perturbation {
                let source = base_preds[spec.source];
                for c in 0..spec.copies {
                    base_preds[bases.len() + c] =
                        perturb_label(source, spec.kind, spec.theta, labels, rng);
                }
            }
            let mut key = 0u64;
            for &p in base_preds.iter() {
                key = key * labels as u64 + p as u64;
            }
            let mut slot = 0;
            for (idx, aggregator) in &trained {
                let set = caches[*idx]
                    .entry(key)
                    .or_insert_with(|| aggregator.decision_set(&base_preds, labels));
                out[slot] = if set.len() == 1 {
                    set[0]
                } else {
                    set[rng.random_range(0..set.len())]
                };
                slot += 1;
            }
            if track_optimal {
                out[slot] = optimal_rule(x);
                slot += 1;
            }
            if track_best_base {
                out[slot..slot + bases.len()].copy_from_slice(&base_preds[..bases.len()]);
            }
        },
    );

    // Assemble per-method samples in the requested order.
    let mut result = Vec::with_capacity(config.methods.len());
    let mut series_idx = 0usize;
    let mut by_method: HashMap<&'static str, usize> = HashMap::new();
    for (method, trained) in &aggregators {
        if trained.is_some() {
            by_method.insert(method.name(), series_idx);
            series_idx += 1;
        }
    }
    let optimal_idx = if track_optimal {
        let idx = series_idx;
        series_idx += 1;
        Some(idx)
    } else {
        None
    };
    let base_start = series_idx;

    for &method in &config.methods {
        let sample = match method {
            Method::Optimal => {
                let s = &series[optimal_idx.expect("tracked")];
                MethodSample {
                    accuracy: s.accuracy(),
                    trials: s.trials,
                    confusion: s.confusion.clone(),
                    truncated: outcome.truncated,
                    status: ReportStatus::Ok,
                }
            }
            Method::BestBase => {
                let best = (0..bases.len())
                    .max_by(|&a, &b| {
                        series[base_start + a]
                            .accuracy()
                            .partial_cmp(&series[base_start + b].accuracy())
                            .unwrap()
                            .then(b.cmp(&a))
                    })
                    .expect("at least one base");
                let s = &series[base_start + best];
                MethodSample {
                    accuracy: s.accuracy(),
                    trials: s.trials,
                    confusion: s.confusion.clone(),
                    truncated: outcome.truncated,
                    status: ReportStatus::Ok,
                }
            }
            _ => match by_method.get(method.name()) {
                Some(&idx) => {
                    let s = &series[idx];
                    MethodSample {
                        accuracy: s.accuracy(),
                        trials: s.trials,
                        confusion: s.confusion.clone(),
                        truncated: outcome.truncated,
                        status: ReportStatus::Ok,
                    }
                }
                None => MethodSample {
                    accuracy: 0.0,
                    trials: 0,
                    confusion: vec![0; labels * labels],
                    truncated: false,
                    status: ReportStatus::Intractable,
                },
            },
        };
        result.push(sample);
    }
    Ok(result)
}

/// Run the full experiment: every (sweep value, replicate) cell generates
/// its own data from a derived seed, trains every requested aggregator and
/// measures accuracy by dynamic sampling. Cells are independent and run in
/// parallel; reports merge deterministically in (method, sweep) order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome> {
    if config.sweep.is_empty() || config.replicates == 0 || config.methods.is_empty() {
        return Err(SpoccError::InvalidParameter(
            "experiment needs sweep values, replicates and methods".into(),
        ));
    }
    if config.scenario == Scenario::Imbalance {
        for &v in &config.sweep {
            if !(1..=10).contains(&v) {
                return Err(SpoccError::InvalidParameter(format!(
                    "imbalance sweep value {v} outside 1..=10 (beta = 0.05 * value)"
                )));
            }
        }
    }
    let jobs: Vec<(usize, usize)> = (0..config.sweep.len())
        .flat_map(|s| (0..config.replicates).map(move |r| (s, r)))
        .collect();
    let cell_results: Vec<Result<Vec<MethodSample>>> = par::map_slice(&jobs, |&(s, r)| {
        let job_index = (s * config.replicates + r) as u64;
        run_replicate(config, config.sweep[s], config.seed.wrapping_add(job_index))
    });
    let mut cells = Vec::with_capacity(cell_results.len());
    for cell in cell_results {
        cells.push(cell?);
    }

    let labels = vec!["w1".to_string(), "w2".to_string()];
    let label_count = labels.len();
    let mut reports = Vec::new();
    for (m_idx, &method) in config.methods.iter().enumerate() {
        for (s_idx, &sweep_raw) in config.sweep.iter().enumerate() {
            let sweep_value = match config.scenario {
                Scenario::Imbalance => 0.05 * sweep_raw as f64,
                _ => sweep_raw as f64,
            };
            let mut samples = Vec::new();
            let mut seeds = Vec::new();
            let mut pooled = vec![0u64; label_count * label_count];
            let mut successes = 0u64;
            let mut trials = 0u64;
            let mut truncated = 0usize;
            let mut intractable = false;
            for r in 0..config.replicates {
                let job_index = (s_idx * config.replicates + r) as u64;
                let sample = &cells[s_idx * config.replicates + r][m_idx];
                match sample.status {
                    ReportStatus::Intractable => intractable = true,
                    ReportStatus::Ok => {
                        samples.push(sample.accuracy);
                        seeds.push(config.seed.wrapping_add(job_index));
                        for (p, &c) in pooled.iter_mut().zip(&sample.confusion) {
                            *p += c;
                        }
                        trials += sample.trials;
                        successes += sample
                            .confusion
                            .iter()
                            .enumerate()
                            .filter(|(i, _)| i % label_count == i / label_count)
                            .map(|(_, &c)| c)
                            .sum::<u64>();
                        if sample.truncated {
                            truncated += 1;
                        }
                    }
                }
            }
            let status = if intractable {
                ReportStatus::Intractable
            } else {
                ReportStatus::Ok
            };
            let (mean, ci_half_width) = if samples.len() >= 2 {
                let mut ci_rng = ChaCha8Rng::seed_from_u64(
                    config
                        .seed
                        .wrapping_add(0x5EED_B007)
                        .wrapping_add((m_idx * config.sweep.len() + s_idx) as u64),
                );
                bootstrap_ci(&samples, 1000, 0.95, &mut ci_rng)?
            } else if samples.len() == 1 {
                (samples[0], 0.0)
            } else {
                (0.0, 0.0)
            };
            let row_totals: Vec<u64> = (0..label_count)
                .map(|row| {
                    pooled[row * label_count..(row + 1) * label_count]
                        .iter()
                        .sum()
                })
                .collect();
            let confusion: Vec<f64> = (0..label_count * label_count)
                .map(|i| {
                    let row_total = row_totals[i / label_count];
                    if row_total == 0 {
                        0.0
                    } else {
                        pooled[i] as f64 / row_total as f64
                    }
                })
                .collect();
            let class_weights: Vec<f64> = row_totals
                .iter()
                .map(|&t| {
                    if trials == 0 {
                        0.0
                    } else {
                        t as f64 / trials as f64
                    }
                })
                .collect();
            reports.push(ExperimentReport {
                method: method.name().to_string(),
                sweep: sweep_value,
                std_dev: std_dev(&samples),
                mean,
                ci_half_width,
                pooled_accuracy: if trials == 0 {
                    0.0
                } else {
                    successes as f64 / trials as f64
                },
                samples,
                confusion,
                class_weights,
                labels: labels.clone(),
                seeds,
                truncated_replicates: truncated,
                status,
            });
        }
    }
    Ok(ExperimentOutcome {
        scenario: config.scenario.name().to_string(),
        reports,
    })
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// Write `accuracies.csv`, `summary.csv`, one `confusion_<method>.csv` per
/// method and the full `reports.json` into the directory.
pub fn write_experiment_reports(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;

    let mut accuracies = std::fs::File::create(dir.join("accuracies.csv"))?;
    writeln!(accuracies, "method,sweep,replicate,accuracy")?;
    for report in &outcome.reports {
        for (r, &acc) in report.samples.iter().enumerate() {
            writeln!(
                accuracies,
                "{},{},{},{}",
                report.method,
                report.sweep,
                r,
                fmt6(acc)
            )?;
        }
    }

    let mut summary = std::fs::File::create(dir.join("summary.csv"))?;
    writeln!(
        summary,
        "method,sweep,mean,ci_half_width,std_dev,pooled_accuracy,replicates,status"
    )?;
    for report in &outcome.reports {
        writeln!(
            summary,
            "{},{},{},{},{},{},{},{}",
            report.method,
            report.sweep,
            fmt6(report.mean),
            fmt6(report.ci_half_width),
            fmt6(report.std_dev),
            fmt6(report.pooled_accuracy),
            report.samples.len(),
            match report.status {
                ReportStatus::Ok => "ok",
                ReportStatus::Intractable => "intractable",
            }
        )?;
    }

    let mut methods: Vec<&str> = outcome.reports.iter().map(|r| r.method.as_str()).collect();
    methods.dedup();
    for method in methods {
        let path = dir.join(format!("confusion_{method}.csv"));
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "sweep,true_label,pred_label,value")?;
        for report in outcome.reports.iter().filter(|r| r.method == method) {
            let l = report.labels.len();
            for t in 0..l {
                for p in 0..l {
                    writeln!(
                        file,
                        "{},{},{},{}",
                        report.sweep,
                        report.labels[t],
                        report.labels[p],
                        fmt6(report.confusion[t * l + p])
                    )?;
                }
            }
        }
    }

    let json = serde_json::to_string_pretty(outcome)?;
    std::fs::write(dir.join("reports.json"), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn calibrated_half_side_near_reference() {
        assert!((calibrated_half_side() - 1.50).abs() < 0.01);
    }

    #[test]
    fn dynamic_sampling_perfect_predictor_stops_early() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let config = GaussianQuadrantConfig::balanced(calibrated_half_side(), 1);
        let mut series = vec![SeriesTally::new("perfect", 2, true)];
        let rule = StoppingRule::default();
        let outcome =
            dynamic_test_sample(&config, &rule, &mut series, &mut rng, |_, truth, _, out| {
                out[0] = truth;
            });
        assert!(!outcome.truncated);
        assert!(outcome.points <= 5000, "took {} points", outcome.points);
        assert_eq!(series[0].successes, series[0].trials);
    }

    #[test]
    fn dynamic_sampling_coin_flip_needs_quarter_million() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let config = GaussianQuadrantConfig::balanced(calibrated_half_side(), 1);
        let mut series = vec![SeriesTally::new("coin", 2, true)];
        let rule = StoppingRule::default();
        let outcome = dynamic_test_sample(
            &config,
            &rule,
            &mut series,
            &mut rng,
            |_, truth, rng, out| {
                // Correct with probability one half, independent of the truth.
                out[0] = if rng.random::<bool>() {
                    truth
                } else {
                    1 - truth
                };
            },
        );
        // Normal-approximation oracle: (1.96 / (2 * 0.002))^2, about 240k.
        let expected = (1.96f64 / (2.0 * 0.002)).powi(2);
        assert!(!outcome.truncated);
        let ratio = outcome.points as f64 / expected;
        assert!(
            (0.8..1.2).contains(&ratio),
            "points {} vs oracle {expected}",
            outcome.points
        );
    }

    #[test]
    fn dynamic_sampling_governed_by_widest_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let config = GaussianQuadrantConfig::balanced(calibrated_half_side(), 1);
        let rule = StoppingRule {
            confidence: 0.95,
            half_width: 0.01,
        };
        let mut both = vec![
            SeriesTally::new("perfect", 2, true),
            SeriesTally::new("noisy", 2, true),
        ];
        let outcome =
            dynamic_test_sample(&config, &rule, &mut both, &mut rng, |_, truth, rng, out| {
                out[0] = truth;
                out[1] = if rng.random::<f64>() < 0.8 {
                    truth
                } else {
                    1 - truth
                };
            });
        // Alone, the perfect predictor stops within the first batch; the
        // noisy companion forces thousands of points.
        assert!(outcome.points >= 5000, "stopped after {}", outcome.points);
    }

    #[test]
    fn truncation_flag_at_cap() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let config = GaussianQuadrantConfig::balanced(calibrated_half_side(), 1);
        let rule = StoppingRule {
            confidence: 0.95,
            half_width: 1e-5,
        };
        let mut series = vec![SeriesTally::new("coin", 2, true)];
        let outcome = dynamic_test_sample(
            &config,
            &rule,
            &mut series,
            &mut rng,
            |_, truth, rng, out| {
                out[0] = if rng.random::<bool>() {
                    truth
                } else {
                    1 - truth
                };
            },
        );
        assert!(outcome.truncated);
        assert_eq!(outcome.points, TEST_CAP);
    }

    #[test]
    fn small_experiment_shapes_and_determinism() {
        let config = ExperimentConfig {
            scenario: Scenario::Redundancy,
            sweep: vec![0, 2],
            replicates: 2,
            methods: vec![Method::Vote, Method::Spocc, Method::Optimal],
            seed: 7,
            stopping: StoppingRule {
                confidence: 0.95,
                half_width: 0.02,
            },
            ..ExperimentConfig::default()
        };
        let outcome = run_experiment(&config).unwrap();
        assert_eq!(outcome.reports.len(), 6);
        for report in &outcome.reports {
            assert_eq!(report.samples.len(), 2);
            assert_eq!(report.seeds.len(), 2);
            // Confusion rows normalize, and the diagonal weighted by the
            // pooled class frequencies reproduces the pooled accuracy.
            let l = report.labels.len();
            let mut weighted_diagonal = 0.0;
            for t in 0..l {
                let row: f64 = report.confusion[t * l..(t + 1) * l].iter().sum();
                assert!((row - 1.0).abs() < 1e-9, "row sum {row}");
                weighted_diagonal += report.class_weights[t] * report.confusion[t * l + t];
            }
            assert!(
                (weighted_diagonal - report.pooled_accuracy).abs() < 1e-6,
                "weighted diagonal {weighted_diagonal} vs pooled {}",
                report.pooled_accuracy
            );
        }
        let again = run_experiment(&config).unwrap();
        assert_eq!(outcome, again);
    }

    #[test]
    fn adversary_zero_sweep_equals_redundancy_zero() {
        let base = ExperimentConfig {
            sweep: vec![0],
            replicates: 2,
            methods: vec![Method::Vote, Method::AdaSpocc],
            seed: 11,
            stopping: StoppingRule {
                confidence: 0.95,
                half_width: 0.02,
            },
            ..ExperimentConfig::default()
        };
        let adversary = ExperimentConfig {
            scenario: Scenario::Adversary,
            ..base.clone()
        };
        let redundancy = ExperimentConfig {
            scenario: Scenario::Redundancy,
            ..base
        };
        let a = run_experiment(&adversary).unwrap();
        let b = run_experiment(&redundancy).unwrap();
        for (ra, rb) in a.reports.iter().zip(&b.reports) {
            assert_eq!(ra.samples, rb.samples);
        }
    }

    #[test]
    fn heterogeneous_scenario_runs_mixed_learners() {
        let config = ExperimentConfig {
            scenario: Scenario::Heterogeneous,
            sweep: vec![1],
            replicates: 2,
            methods: vec![Method::Vote, Method::Spocc, Method::BestBase],
            seed: 19,
            stopping: StoppingRule {
                confidence: 0.95,
                half_width: 0.05,
            },
            ..ExperimentConfig::default()
        };
        let outcome = run_experiment(&config).unwrap();
        assert_eq!(outcome.reports.len(), 3);
        for report in &outcome.reports {
            for &acc in &report.samples {
                assert!(acc > 0.5, "{} accuracy {acc}", report.method);
            }
        }
    }

    #[test]
    fn imbalance_sweep_validation() {
        let config = ExperimentConfig {
            scenario: Scenario::Imbalance,
            sweep: vec![0],
            ..ExperimentConfig::default()
        };
        assert!(run_experiment(&config).is_err());
    }

    #[test]
    fn report_files_round_trip() {
        let config = ExperimentConfig {
            scenario: Scenario::Redundancy,
            sweep: vec![0],
            replicates: 2,
            methods: vec![Method::Vote],
            seed: 3,
            stopping: StoppingRule {
                confidence: 0.95,
                half_width: 0.05,
            },
            ..ExperimentConfig::default()
        };
        let outcome = run_experiment(&config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_experiment_reports(&outcome, dir.path()).unwrap();
        for file in [
            "accuracies.csv",
            "summary.csv",
            "confusion_vote.csv",
            "reports.json",
        ] {
            assert!(dir.path().join(file).exists(), "{file} missing");
        }
        let json = std::fs::read_to_string(dir.path().join("reports.json")).unwrap();
        let back: ExperimentOutcome = serde_json::from_str(&json).unwrap();
        assert_eq!(outcome, back);
        // Printed precision in the CSV matches the stored accuracy to 1e-6.
        let accuracies = std::fs::read_to_string(dir.path().join("accuracies.csv")).unwrap();
        let first = accuracies.lines().nth(1).unwrap();
        let acc: f64 = first.rsplit(',').next().unwrap().parse().unwrap();
        assert!((acc - outcome.reports[0].samples[0]).abs() < 1e-6);
    }
}
