//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of two tensors (or a tensor and a transform) do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    /// An argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A latent became non-finite during sampling.
    #[error("non-finite latent at step {step} (t={t}): max |z| = {max_abs}")]
    NonFiniteLatent { step: usize, t: f64, max_abs: f64 },

    /// Training loss exceeded the divergence threshold.
    #[error("training diverged at step {step}: loss = {loss}")]
    Divergence { step: usize, loss: f64 },

    /// A binary or text file does not conform to its documented layout.
    #[error("format error: {0}")]
    Format(String),

    /// A checkpoint does not match the requested configuration.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            expected: expected.into(),
            got: got.into(),
        }
    }
}
