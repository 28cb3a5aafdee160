use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degenerate embedding: mean has zero norm")]
    DegenerateEmbedding,
    #[error("degenerate triplet: tau has zero variance")]
    DegenerateTriplet,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid triplet label {0}; must be 1, 2 or 3")]
    InvalidLabel(u8),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("training diverged at epoch {epoch}, iteration {iteration}: {reason}")]
    Diverged {
        epoch: usize,
        iteration: usize,
        reason: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
