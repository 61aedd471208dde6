use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the difficulty-scoring pipeline.
#[derive(Debug, Error)]
pub enum TdsError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("target column `{0}` not found")]
    MissingTargetColumn(String),
    #[error("table is empty")]
    EmptyTable,
    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("column `{0}` has no observed values over the fitting rows")]
    AllMissing(String),
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("not enough rows: need at least {needed}, got {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("only one class present in {0}")]
    SingleClass(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("ensemble fingerprint mismatch: model fitted against {expected}, scored against {found}")]
    FingerprintMismatch { expected: String, found: String },
    #[error("targets are required when the residual trajectory stream is enabled")]
    MissingTargets,
    #[error("tree {0} carries no cover statistics")]
    MissingCover(usize),
    #[error("operation `{op}` not supported for task {task}")]
    TaskMismatch { op: &'static str, task: String },
    #[error("pool exhausted: requested {requested}, {available} available")]
    PoolExhausted { requested: usize, available: usize },
    #[error("zero risk at full coverage; NAURC is undefined")]
    ZeroFullCoverageRisk,
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),
}

pub type Result<T> = std::result::Result<T, TdsError>;

impl TdsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TdsError::Io {
            path: path.into(),
            source,
        }
    }
}
