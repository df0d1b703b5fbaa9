//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by data generation, fitting and the benchmark harness.
#[derive(Debug, Error)]
pub enum FrfError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unstable system: {0}")]
    UnstableSystem(String),

    #[error("model order too large: {0}")]
    OrderTooLarge(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("kernel hyperparameters out of bounds: {0}")]
    KernelBounds(String),

    #[error("hyperparameter tuning failed: {0}")]
    TuningFailed(String),

    #[error("ground truth missing: {0}")]
    MissingGroundTruth(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl FrfError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        FrfError::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, FrfError>;
