use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, VaiError>;

#[derive(Debug, Error)]
pub enum VaiError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("config parse error in {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },

    /// The victim did not beat the uniform-random policy by the required margin.
    #[error("victim training failed: trained return {trained:.6} vs random return {random:.6} (required margin {margin})")]
    TrainingFailure {
        trained: f64,
        random: f64,
        margin: f64,
    },

    #[error("missing upstream artifact for stage `{stage}`: {path}")]
    StageDependency { stage: String, path: PathBuf },

    #[error("brute-force enumeration of {count} subsets exceeds cap {cap}")]
    CapExceeded { count: u128, cap: u128 },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(VaiError::InvalidInput(msg.into()))
}
