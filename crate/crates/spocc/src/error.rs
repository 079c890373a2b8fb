use thiserror::Error;

/// Errors produced by model construction, training and file ingestion.
#[derive(Debug, Error)]
pub enum SpoccError {
    #[error("label space needs at least 2 distinct labels, got {0}")]
    LabelSpaceTooSmall(usize),
    #[error("duplicate label name `{0}` in label space")]
    DuplicateLabel(String),
    #[error("probability masses sum to {0}, expected 1 within 1e-9")]
    NotNormalized(f64),
    #[error("probability mass at index {index} is negative ({value})")]
    NegativeMass { index: usize, value: f64 },
    #[error("possibility value at index {index} is {value}, outside [0, 1]")]
    OutOfUnitRange { index: usize, value: f64 },
    #[error("t-norm parameter lambda must be >= 1, got {0}")]
    InvalidLambda(f64),
    #[error("discount rate must lie in [0, 1], got {0}")]
    InvalidDiscount(f64),
    #[error("subset of labels is empty")]
    EmptySubset,
    #[error("label index {index} out of range for {count} labels")]
    LabelOutOfRange { index: usize, count: usize },
    #[error("classifier index {index} out of range for {count} classifiers")]
    ClassifierOutOfRange { index: usize, count: usize },
    #[error("validation table must contain at least one row")]
    EmptyTable,
    #[error("distribution lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("operation needs at least {needed} classifiers, got {got}")]
    TooFewClassifiers { needed: usize, got: usize },
    #[error("confusion matrix holds no observations")]
    EmptyConfusionMatrix,
    #[error("threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("cluster count {requested} not within 1..={max}")]
    InvalidClusterCount { requested: usize, max: usize },
    #[error("grid must contain at least 2 strictly increasing points")]
    InvalidGrid,
    #[error("cross-validation with {folds} folds needs at least {folds} rows, got {rows}")]
    TooFewRows { folds: usize, rows: usize },
    #[error("model is in {found} mode, operation needs {expected} mode")]
    ModeMismatch {
        expected: &'static str,
        found: &'static str,
    },
    #[error("table has {got} prediction columns, model expects {expected}")]
    ColumnCountMismatch { expected: usize, got: usize },
    #[error(
        "Bayes aggregation needs {cells} cells ({labels} labels ^ {classifiers} classifiers), over the cap of {cap}"
    )]
    Intractable {
        labels: usize,
        classifiers: usize,
        cells: u128,
        cap: u64,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("csv parse error at line {line}: {message}")]
    CsvParse { line: u64, message: String },
    #[error("unknown label `{name}`; label space is [{known}]")]
    UnknownLabel { name: String, known: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model file error: {0}")]
    ModelFormat(String),
}

pub type Result<T> = std::result::Result<T, SpoccError>;
