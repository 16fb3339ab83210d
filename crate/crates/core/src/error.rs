use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("column `{column}` has a single distinct value")]
    DegenerateColumn { column: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("sensitive class {class} has zero count")]
    MissingSensitiveClass { class: usize },
    #[error("zero denominator with nonzero numerator at cell ({row}, {col})")]
    CorruptJoint { row: usize, col: usize },
    #[error("inner maximizer did not converge after {iterations} iterations (gradient mapping norm {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("privacy precondition violated: {0}")]
    Privacy(String),
    #[error("topology error: {0}")]
    Topology(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
