use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite input")]
    NonFiniteInput,

    #[error("non-finite gradient; optimizer step rejected")]
    NonFiniteGradient,

    #[error("non-finite {constituent} log-density or score")]
    NonFiniteDensity { constituent: &'static str },

    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),

    #[error("training diverged at step {step}: {reason}")]
    TrainingDiverged { step: usize, reason: String },

    #[error("transport diverged at step {step}: {count} particles non-finite")]
    TransportDiverged { step: usize, count: usize },

    #[error("weights are not normalized (sum = {0})")]
    Unnormalized(f64),

    #[error("all log-weights are -inf")]
    DegenerateWeights,

    #[error("cholesky factorization failed: {0}")]
    Cholesky(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: row {row}: {msg}")]
    Data { path: PathBuf, row: usize, msg: String },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
