//! File formats: validation-table and prediction CSVs, dataset CSVs, and
//! the versioned JSON model envelope shared by every aggregation method.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::baselines::{
    bayes_agg_predict, naive_bayes_predict, stacking_predict, weighted_vote, BayesAggModel,
    NaiveBayesModel, SelectionModel, StackingModel, VoteModel, DEFAULT_BAYES_CELL_CAP,
};
use crate::ensemble::{append_classifier, train_adaspocc, train_spocc, GridSpec, SpoccModel};
use crate::error::{Result, SpoccError};
use crate::estimation::ValidationTable;
use crate::harness::Method;
use crate::possibility::LabelSpace;
use crate::synth::Dataset;

pub const MODEL_VERSION: &str = "spocc-model/1";

/// A trained model of any method, tagged for the common JSON envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method")]
pub enum AnyModel {
    #[serde(rename = "spocc")]
    Spocc(SpoccModel),
    #[serde(rename = "adaspocc")]
    AdaSpocc(SpoccModel),
    #[serde(rename = "selection")]
    Selection(SelectionModel),
    #[serde(rename = "vote")]
    Vote(VoteModel),
    #[serde(rename = "exp-vote")]
    ExpVote(VoteModel),
    #[serde(rename = "naive-bayes")]
    NaiveBayes(NaiveBayesModel),
    #[serde(rename = "bayes")]
    Bayes(BayesAggModel),
    #[serde(rename = "stacking")]
    Stacking(StackingModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEnvelope {
    pub version: String,
    #[serde(flatten)]
    pub model: AnyModel,
}

impl AnyModel {
    pub fn method_name(&self) -> &'static str {
        match self {
            AnyModel::Spocc(_) => "spocc",
            AnyModel::AdaSpocc(_) => "adaspocc",
            AnyModel::Selection(_) => "selection",
            AnyModel::Vote(_) => "vote",
            AnyModel::ExpVote(_) => "exp-vote",
            AnyModel::NaiveBayes(_) => "naive-bayes",
            AnyModel::Bayes(_) => "bayes",
            AnyModel::Stacking(_) => "stacking",
        }
    }

    pub fn label_space(&self) -> &LabelSpace {
        match self {
            AnyModel::Spocc(m) | AnyModel::AdaSpocc(m) => m.label_space(),
            AnyModel::Selection(m) => &m.label_space,
            AnyModel::Vote(m) | AnyModel::ExpVote(m) => &m.label_space,
            AnyModel::NaiveBayes(m) => &m.label_space,
            AnyModel::Bayes(m) => &m.label_space,
            AnyModel::Stacking(m) => &m.label_space,
        }
    }

    pub fn predict<R: Rng + ?Sized>(&self, preds: &[usize], rng: &mut R) -> Result<usize> {
        match self {
            AnyModel::Spocc(m) | AnyModel::AdaSpocc(m) => m.predict(preds, rng),
            AnyModel::Selection(m) => {
                if m.best >= preds.len() {
                    return Err(SpoccError::ColumnCountMismatch {
                        expected: m.error_rates.len(),
                        got: preds.len(),
                    });
                }
                Ok(preds[m.best])
            }
            AnyModel::Vote(m) | AnyModel::ExpVote(m) => {
                if preds.len() != m.weights.weights.len() {
                    return Err(SpoccError::ColumnCountMismatch {
                        expected: m.weights.weights.len(),
                        got: preds.len(),
                    });
                }
                Ok(weighted_vote(
                    &m.weights.weights,
                    preds,
                    m.label_space.count(),
                    rng,
                ))
            }
            AnyModel::NaiveBayes(m) => naive_bayes_predict(m, preds, rng),
            AnyModel::Bayes(m) => bayes_agg_predict(m, preds, rng),
            AnyModel::Stacking(m) => stacking_predict(m, preds, rng),
        }
    }
}

/// Train the requested aggregation method from a validation table.
pub fn train_model(method: Method, table: &ValidationTable, folds: usize) -> Result<AnyModel> {
    Ok(match method {
        Method::Spocc => AnyModel::Spocc(train_spocc(table)?),
        Method::AdaSpocc => AnyModel::AdaSpocc(train_adaspocc(
            table,
            &GridSpec::default_lambda(),
            &GridSpec::default_rho(),
            folds,
        )?),
        Method::Selection => AnyModel::Selection(crate::baselines::selection_train(table)?),
        Method::Vote => AnyModel::Vote(crate::baselines::vote_train(table)?),
        Method::ExpVote => AnyModel::ExpVote(crate::baselines::exp_vote_train(
            table,
            &GridSpec::default_temperature(),
            folds,
        )?),
        Method::NaiveBayes => AnyModel::NaiveBayes(crate::baselines::naive_bayes_train(table)?),
        Method::Bayes => AnyModel::Bayes(crate::baselines::bayes_agg_train(
            table,
            DEFAULT_BAYES_CELL_CAP,
        )?),
        Method::Stacking => AnyModel::Stacking(crate::baselines::stacking_train(
            table,
            &GridSpec::default_l2(),
            folds,
        )?),
        Method::BestBase | Method::Optimal => {
            return Err(SpoccError::InvalidParameter(format!(
                "`{}` is a benchmark reference, not a trainable aggregator",
                method.name()
            )))
        }
    })
}

/// Append the extended table's last column to a possibilistic model.
pub fn append_to_model(
    model: &AnyModel,
    table: &ValidationTable,
    threshold: f64,
) -> Result<AnyModel> {
    match model {
        AnyModel::Spocc(m) => Ok(AnyModel::Spocc(append_classifier(m, table, threshold)?)),
        AnyModel::AdaSpocc(m) => Ok(AnyModel::AdaSpocc(append_classifier(m, table, threshold)?)),
        other => Err(SpoccError::InvalidParameter(format!(
            "append is only supported for possibilistic models, not `{}`",
            other.method_name()
        ))),
    }
}

pub fn save_model(path: &Path, model: &AnyModel) -> Result<()> {
    let envelope = ModelEnvelope {
        version: MODEL_VERSION.to_string(),
        model: model.clone(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&envelope)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<AnyModel> {
    let text = std::fs::read_to_string(path)?;
    let envelope: ModelEnvelope = serde_json::from_str(&text)?;
    if envelope.version != MODEL_VERSION {
        return Err(SpoccError::ModelFormat(format!(
            "unsupported model version `{}`, expected `{MODEL_VERSION}`",
            envelope.version
        )));
    }
    Ok(envelope.model)
}

// ---------------------------------------------------------------------------
// CSV formats
// ---------------------------------------------------------------------------

fn csv_error(err: &csv::Error) -> SpoccError {
    let line = match err.position() {
        Some(pos) => pos.line(),
        None => 0,
    };
    SpoccError::CsvParse {
        line,
        message: err.to_string(),
    }
}

struct RawTable {
    headers: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

fn read_raw_csv(path: &Path) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(&e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(&e))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(SpoccError::CsvParse {
                line,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        rows.push((line, record.iter().map(|f| f.to_string()).collect()));
    }
    Ok(RawTable { headers, rows })
}

fn expect_table_headers(headers: &[String]) -> Result<usize> {
    if headers.len() < 2 || headers.last().map(String::as_str) != Some("y") {
        return Err(SpoccError::CsvParse {
            line: 1,
            message: "validation table header must be c_1,...,c_K,y".into(),
        });
    }
    Ok(headers.len() - 1)
}

/// Read a validation table, inferring the label space from the sorted set
/// of distinct label names appearing anywhere in the file.
pub fn read_validation_table(path: &Path) -> Result<ValidationTable> {
    let raw = read_raw_csv(path)?;
    expect_table_headers(&raw.headers)?;
    if raw.rows.is_empty() {
        return Err(SpoccError::EmptyTable);
    }
    let mut names: Vec<String> = raw
        .rows
        .iter()
        .flat_map(|(_, fields)| fields.iter().cloned())
        .collect();
    names.sort();
    names.dedup();
    let space = LabelSpace::new(names)?;
    table_from_raw(&raw, &space)
}

/// Read a validation table resolving label names against a known space;
/// unknown names are rejected with the space listed.
pub fn read_validation_table_with_space(
    path: &Path,
    space: &LabelSpace,
) -> Result<ValidationTable> {
    let raw = read_raw_csv(path)?;
    expect_table_headers(&raw.headers)?;
    if raw.rows.is_empty() {
        return Err(SpoccError::EmptyTable);
    }
    table_from_raw(&raw, space)
}

fn table_from_raw(raw: &RawTable, space: &LabelSpace) -> Result<ValidationTable> {
    let k = raw.headers.len() - 1;
    let mut predictions = Vec::with_capacity(raw.rows.len());
    let mut truths = Vec::with_capacity(raw.rows.len());
    for (_, fields) in &raw.rows {
        let mut row = Vec::with_capacity(k);
        for field in &fields[..k] {
            row.push(space.index_of(field)?);
        }
        predictions.push(row);
        truths.push(space.index_of(&fields[k])?);
    }
    ValidationTable::new(predictions, truths, space.clone())
}

/// Read prediction rows (header `c_1,...,c_K`, no truth column) against a
/// model's label space.
pub fn read_prediction_rows(
    path: &Path,
    space: &LabelSpace,
    expected_columns: usize,
) -> Result<Vec<Vec<usize>>> {
    let raw = read_raw_csv(path)?;
    if raw.headers.len() != expected_columns {
        return Err(SpoccError::ColumnCountMismatch {
            expected: expected_columns,
            got: raw.headers.len(),
        });
    }
    raw.rows
        .iter()
        .map(|(_, fields)| fields.iter().map(|f| space.index_of(f)).collect())
        .collect()
}

/// Write predicted labels, one name per row under a `y` header.
pub fn write_labels(path: &Path, indices: &[usize], space: &LabelSpace) -> Result<()> {
    let mut out = String::from("y\n");
    for &i in indices {
        out.push_str(space.name(i));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Write a validation table in the canonical `c_1,...,c_K,y` format.
pub fn write_validation_table(path: &Path, table: &ValidationTable) -> Result<()> {
    let k = table.classifiers();
    let mut out = String::new();
    for i in 0..k {
        out.push_str(&format!("c_{},", i + 1));
    }
    out.push_str("y\n");
    for row in 0..table.rows() {
        for k_idx in 0..k {
            out.push_str(table.label_space().name(table.prediction(row, k_idx)));
            out.push(',');
        }
        out.push_str(table.label_space().name(table.truth(row)));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Write a 2-D dataset as `x1,x2,y`.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut out = String::from("x1,x2,y\n");
    for (point, &label) in dataset.points.iter().zip(&dataset.labels) {
        out.push_str(&format!(
            "{},{},{}\n",
            point[0],
            point[1],
            dataset.label_space.name(label)
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Read a 2-D dataset from `x1,x2,y`, inferring the label space.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let raw = read_raw_csv(path)?;
    if raw.headers != ["x1", "x2", "y"] {
        return Err(SpoccError::CsvParse {
            line: 1,
            message: "dataset header must be x1,x2,y".into(),
        });
    }
    let mut names: Vec<String> = raw.rows.iter().map(|(_, f)| f[2].clone()).collect();
    names.sort();
    names.dedup();
    let space = LabelSpace::new(names)?;
    let mut points = Vec::with_capacity(raw.rows.len());
    let mut labels = Vec::with_capacity(raw.rows.len());
    for (line, fields) in &raw.rows {
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| SpoccError::CsvParse {
                line: *line,
                message: format!("`{s}` is not a number"),
            })
        };
        points.push([parse(&fields[0])?, parse(&fields[1])?]);
        labels.push(space.index_of(&fields[2])?);
    }
    Ok(Dataset {
        points,
        labels,
        label_space: space,
    })
}

/// Accuracy and row-normalized confusion of a model over a labeled table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub accuracy: f64,
    pub rows: usize,
    pub labels: Vec<String>,
    /// Row-major true x predicted, rows normalized to 1.
    pub confusion: Vec<f64>,
}

pub fn evaluate_model<R: Rng + ?Sized>(
    model: &AnyModel,
    table: &ValidationTable,
    rng: &mut R,
) -> Result<EvalReport> {
    let labels = model.label_space().count();
    let mut counts = vec![0u64; labels * labels];
    let mut correct = 0u64;
    for i in 0..table.rows() {
        let pred = model.predict(table.prediction_row(i), rng)?;
        let truth = table.truth(i);
        counts[truth * labels + pred] += 1;
        if pred == truth {
            correct += 1;
        }
    }
    let confusion: Vec<f64> = (0..labels * labels)
        .map(|i| {
            let row = i / labels;
            let total: u64 = counts[row * labels..(row + 1) * labels].iter().sum();
            if total == 0 {
                0.0
            } else {
                counts[i] as f64 / total as f64
            }
        })
        .collect();
    Ok(EvalReport {
        method: model.method_name().to_string(),
        accuracy: correct as f64 / table.rows() as f64,
        rows: table.rows(),
        labels: model.label_space().names().to_vec(),
        confusion,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn table_csv_round_trip() {
        let file = write_temp("c_1,c_2,y\na,b,a\nb,b,b\na,a,a\n");
        let table = read_validation_table(file.path()).unwrap();
        assert_eq!(table.rows(), 3);
        assert_eq!(table.classifiers(), 2);
        assert_eq!(table.label_space().names(), &["a", "b"]);
        assert_eq!(table.prediction(0, 0), 0);
        assert_eq!(table.prediction(0, 1), 1);
        assert_eq!(table.truth(1), 1);

        let out = tempfile::NamedTempFile::new().unwrap();
        write_validation_table(out.path(), &table).unwrap();
        let again = read_validation_table(out.path()).unwrap();
        assert_eq!(table, again);
    }

    #[test]
    fn malformed_csv_reports_line() {
        let file = write_temp("c_1,y\na,a\nb\n");
        match read_validation_table(file.path()) {
            Err(SpoccError::CsvParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let file = write_temp("c_1,label\na,a\n");
        assert!(matches!(
            read_validation_table(file.path()),
            Err(SpoccError::CsvParse { line: 1, .. })
        ));
    }

    #[test]
    fn unknown_label_lists_space() {
        let space = LabelSpace::new(vec!["a", "b"]).unwrap();
        let file = write_temp("c_1,y\nc,a\n");
        match read_validation_table_with_space(file.path(), &space) {
            Err(SpoccError::UnknownLabel { name, known }) => {
                assert_eq!(name, "c");
                assert!(known.contains("a") && known.contains("b"));
            }
            other => panic!("expected unknown label, got {other:?}"),
        }
    }

    #[test]
    fn model_envelope_round_trip() {
        let file =
            write_temp("c_1,c_2,y\na,a,a\nb,b,b\na,b,a\nb,a,b\na,a,a\nb,b,b\na,a,a\nb,b,b\n");
        let table = read_validation_table(file.path()).unwrap();
        for method in [
            Method::Spocc,
            Method::Selection,
            Method::Vote,
            Method::NaiveBayes,
            Method::Bayes,
        ] {
            let model = train_model(method, &table, 2).unwrap();
            let path = tempfile::NamedTempFile::new().unwrap();
            save_model(path.path(), &model).unwrap();
            let back = load_model(path.path()).unwrap();
            assert_eq!(model, back);
            let mut rng_a = ChaCha8Rng::seed_from_u64(5);
            let mut rng_b = ChaCha8Rng::seed_from_u64(5);
            for i in 0..table.rows() {
                assert_eq!(
                    model.predict(table.prediction_row(i), &mut rng_a).unwrap(),
                    back.predict(table.prediction_row(i), &mut rng_b).unwrap()
                );
            }
        }
        // Version check.
        let bogus = write_temp("{\"version\":\"spocc-model/9\",\"method\":\"vote\"}");
        assert!(load_model(bogus.path()).is_err());
    }

    #[test]
    fn dataset_csv_round_trip() {
        use crate::synth::{generate, GaussianQuadrantConfig};
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = generate(&GaussianQuadrantConfig::balanced(1.5, 50), &mut rng);
        let file = tempfile::NamedTempFile::new().unwrap();
        write_dataset(file.path(), &data).unwrap();
        let back = read_dataset(file.path()).unwrap();
        assert_eq!(back.len(), 50);
        assert_eq!(back.labels, data.labels);
        for (a, b) in data.points.iter().zip(&back.points) {
            assert!((a[0] - b[0]).abs() < 1e-12);
            assert!((a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluate_reports_consistent_confusion() {
        let file = write_temp("c_1,y\na,a\nb,b\na,b\nb,b\na,a\nb,a\n");
        let table = read_validation_table(file.path()).unwrap();
        let model = train_model(Method::Vote, &table, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let report = evaluate_model(&model, &table, &mut rng).unwrap();
        assert_eq!(report.rows, 6);
        for row in 0..2 {
            let sum: f64 = report.confusion[row * 2..(row + 1) * 2].iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}
