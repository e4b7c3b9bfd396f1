//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the recognition pipeline.
///
/// The CLI maps these onto process exit codes: data problems exit with 2,
/// invariant violations with 3.
#[derive(Debug, Error)]
pub enum HarError {
    /// Input data could not be parsed or fails a precondition.
    #[error("data error: {0}")]
    Data(String),

    /// An internal invariant was violated; indicates a pipeline bug or a
    /// corrupted run directory.
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Training failed (divergence, degenerate inputs).
    #[error("training error: {0}")]
    Train(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, HarError>;

impl HarError {
    pub fn data(msg: impl Into<String>) -> Self {
        HarError::Data(msg.into())
    }

    pub fn invariant(msg: impl Into<String>) -> Self {
        HarError::Invariant(msg.into())
    }

    pub fn train(msg: impl Into<String>) -> Self {
        HarError::Train(msg.into())
    }
}
