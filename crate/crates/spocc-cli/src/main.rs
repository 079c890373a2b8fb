//! Command-line interface: train aggregation models from validation-table
//! CSVs, predict and evaluate, run the synthetic robustness benchmarks and
//! append classifiers to trained possibilistic models.

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use spocc::ensemble::DEFAULT_APPEND_THRESHOLD;
use spocc::harness::{
    run_experiment, write_experiment_reports, ExperimentConfig, Method, Scenario, StoppingRule,
};
use spocc::io;
use spocc::SpoccError;

#[derive(Parser)]
#[command(
    name = "spocc",
    about = "Possibilistic classifier combination: training, prediction and robustness benchmarks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an aggregation model from a validation-table CSV (header
    /// c_1,...,c_K,y).
    Train {
        /// One of: spocc, adaspocc, selection, vote, exp-vote, naive-bayes,
        /// bayes, stacking.
        #[arg(long)]
        method: String,
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Cross-validation folds for hyperparameter tuning.
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Accepted for interface symmetry; training itself is
        /// deterministic, only prediction tie-breaks consume randomness.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Predict labels for prediction rows (header c_1,...,c_K).
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed for the tie-breaking stream.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Evaluate a model on a labeled table and write a JSON report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a synthetic robustness benchmark and emit CSV/JSON reports.
    Bench {
        /// One of: adversary, fault, redundancy, heterogeneous, imbalance.
        #[arg(long)]
        scenario: String,
        /// Inclusive sweep range `a..b` or comma list `0,2,4`. Counts of
        /// perturbed copies, or imbalance steps (value v means
        /// beta = 0.05 * v, valid 1..=10).
        #[arg(long, default_value = "0..8")]
        sweep: String,
        #[arg(long, default_value_t = 100)]
        replicates: usize,
        /// Output directory for accuracies.csv, summary.csv,
        /// confusion_<method>.csv and reports.json.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of methods (default: all, including the
        /// best-base and optimal references).
        #[arg(long)]
        methods: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Clopper-Pearson half-width at which test sampling stops.
        #[arg(long, default_value_t = 0.002)]
        half_width: f64,
        /// Points per generated dataset.
        #[arg(long, default_value_t = 200)]
        n_train: usize,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Append the last column of an extended table to a trained
    /// possibilistic model.
    Append {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dissimilarity below which the new classifier joins an existing
        /// cluster.
        #[arg(long, default_value_t = DEFAULT_APPEND_THRESHOLD)]
        threshold: f64,
    },
}

fn parse_sweep(spec: &str) -> Result<Vec<u32>, SpoccError> {
    let invalid =
        |detail: &str| SpoccError::InvalidParameter(format!("invalid sweep `{spec}`: {detail}"));
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: u32 = lo
            .trim()
            .parse()
            .map_err(|_| invalid("start not an integer"))?;
        let hi: u32 = hi
            .trim()
            .parse()
            .map_err(|_| invalid("end not an integer"))?;
        if hi < lo {
            return Err(invalid("end below start"));
        }
        return Ok((lo..=hi).collect());
    }
    spec.split(',')
        .map(|v| v.trim().parse().map_err(|_| invalid("not an integer list")))
        .collect()
}

fn parse_methods(spec: Option<&str>) -> Result<Vec<Method>, SpoccError> {
    match spec {
        None => Ok(Method::all()),
        Some(list) => list
            .split(',')
            .map(|m| Method::from_str(m.trim()))
            .collect(),
    }
}

fn run(cli: Cli) -> Result<(), SpoccError> {
    match cli.command {
        Command::Train {
            method,
            table,
            out,
            folds,
            seed: _,
        } => {
            let method = Method::from_str(&method)?;
            let table = io::read_validation_table(&table)?;
            let model = io::train_model(method, &table, folds)?;
            io::save_model(&out, &model)?;
            eprintln!(
                "trained {} on {} rows x {} classifiers -> {}",
                model.method_name(),
                table.rows(),
                table.classifiers(),
                out.display()
            );
            Ok(())
        }
        Command::Predict {
            model,
            preds,
            out,
            seed,
        } => {
            let model = io::load_model(&model)?;
            let space = model.label_space().clone();
            let rows = io::read_prediction_rows(&preds, &space, expected_columns(&model))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<usize> = rows
                .iter()
                .map(|row| model.predict(row, &mut rng))
                .collect::<Result<_, _>>()?;
            io::write_labels(&out, &labels, &space)?;
            eprintln!("predicted {} rows -> {}", labels.len(), out.display());
            Ok(())
        }
        Command::Eval {
            model,
            table,
            report,
            seed,
        } => {
            let model = io::load_model(&model)?;
            let table = io::read_validation_table_with_space(&table, model.label_space())?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let eval = io::evaluate_model(&model, &table, &mut rng)?;
            std::fs::write(&report, serde_json::to_string_pretty(&eval)?)?;
            eprintln!(
                "{}: accuracy {:.6} on {} rows -> {}",
                eval.method,
                eval.accuracy,
                eval.rows,
                report.display()
            );
            Ok(())
        }
        Command::Bench {
            scenario,
            sweep,
            replicates,
            out,
            methods,
            seed,
            half_width,
            n_train,
            folds,
        } => {
            let config = ExperimentConfig {
                scenario: Scenario::from_str(&scenario)?,
                sweep: parse_sweep(&sweep)?,
                replicates,
                methods: parse_methods(methods.as_deref())?,
                seed,
                stopping: StoppingRule {
                    confidence: 0.95,
                    half_width,
                },
                n_train,
                folds,
                ..ExperimentConfig::default()
            };
            let outcome = run_experiment(&config)?;
            write_experiment_reports(&outcome, &out)?;
            eprintln!(
                "{} benchmark: {} sweep points x {} replicates -> {}",
                config.scenario.name(),
                config.sweep.len(),
                config.replicates,
                out.display()
            );
            Ok(())
        }
        Command::Append {
            model,
            table,
            out,
            threshold,
        } => {
            let model = io::load_model(&model)?;
            let table = io::read_validation_table_with_space(&table, model.label_space())?;
            let appended = io::append_to_model(&model, &table, threshold)?;
            io::save_model(&out, &appended)?;
            eprintln!(
                "appended classifier column -> {} ({} classifiers)",
                out.display(),
                table.classifiers()
            );
            Ok(())
        }
    }
}

fn expected_columns(model: &io::AnyModel) -> usize {
    match model {
        io::AnyModel::Spocc(m) | io::AnyModel::AdaSpocc(m) => m.classifier_count(),
        io::AnyModel::Selection(m) => m.error_rates.len(),
        io::AnyModel::Vote(m) | io::AnyModel::ExpVote(m) => m.weights.weights.len(),
        io::AnyModel::NaiveBayes(m) => m.classifier_count(),
        io::AnyModel::Bayes(m) => m.classifier_count(),
        io::AnyModel::Stacking(m) => m.classifier_count(),
    }
}

fn exit_code_for(err: &SpoccError) -> u8 {
    match err {
        SpoccError::Intractable { .. } => 3,
        SpoccError::NotNormalized(_)
        | SpoccError::NegativeMass { .. }
        | SpoccError::OutOfUnitRange { .. }
        | SpoccError::InvalidLambda(_)
        | SpoccError::InvalidDiscount(_) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
