use thiserror::Error;

use crate::landscape::LandscapeKind;

/// Errors produced anywhere in the lab.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value produced by {context}")]
    NonFinite { context: String },

    #[error("example index {index} out of range for {len} examples")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("{op} is not supported for {kind} landscapes")]
    Unsupported { op: &'static str, kind: LandscapeKind },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("diverged at step {step} (epoch {epoch:.3}): {reason}")]
    Diverged { step: u64, epoch: f64, reason: String },

    #[error("matrix is not positive semi-definite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("matrix dimension {dim} exceeds the dense limit {limit}")]
    TooLarge { dim: usize, limit: usize },

    #[error("quadrature grid too coarse: halving the spacing moved p_A by {change:e}")]
    GridTooCoarse { change: f64 },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LabError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        LabError::InvalidArgument(msg.into())
    }

    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        LabError::NonFinite { context: context.into() }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        LabError::Config { key: key.into(), message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
