use thiserror::Error;

/// Errors raised across the forecasting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid calendar: {0}")]
    Calendar(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("granularity mismatch: expected {expected}, found {found}")]
    Granularity {
        expected: &'static str,
        found: &'static str,
    },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("empty sample: {0}")]
    EmptySample(&'static str),

    #[error("requested {k} clusters from {n} entities")]
    TooManyClusters { k: usize, n: usize },

    #[error("training data has no {0} instances")]
    MissingClass(&'static str),

    #[error("no training instances")]
    NoInstances,

    #[error("entity `{0}` has a zero baseline mean")]
    ZeroBaseline(String),

    #[error("city `{0}` has no parent country")]
    MissingParent(String),

    #[error("feature schema mismatch: model {model}, instances {instances}")]
    SchemaMismatch { model: String, instances: String },

    #[error("feature vector has length {found}, schema expects {expected}")]
    FeatureLength { expected: usize, found: usize },

    #[error("labels contain a single class; ROC is undefined")]
    SingleClass,

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
