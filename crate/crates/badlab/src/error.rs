//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input tensors violated a precondition (shape, range, finiteness).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Mismatch between an artifact and what the caller expects
    /// (feature width, tensor shapes, config hash).
    #[error("artifact mismatch: {0}")]
    Mismatch(String),

    /// Training diverged or produced a non-finite loss.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// A dataset cache is missing or fails checksum verification.
    #[error("dataset error: {0}")]
    Dataset(String),

    /// Checkpoint / archive container is malformed.
    #[error("container format error: {0}")]
    Format(String),

    /// A pipeline stage failed; the report is partial.
    #[error("stage '{stage}' failed: {reason}")]
    Stage { stage: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid_input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn invalid_config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub fn mismatch(msg: impl Into<String>) -> Self {
        Error::Mismatch(msg.into())
    }
}
