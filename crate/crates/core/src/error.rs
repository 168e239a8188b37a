use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch ({left} vs {right})")]
    DimensionMismatch {
        op: &'static str,
        left: usize,
        right: usize,
    },

    #[error("{op}: shape mismatch at layer {layer}: {detail}")]
    ShapeMismatch {
        op: &'static str,
        layer: usize,
        detail: String,
    },

    #[error("{0}: empty sample")]
    EmptySample(&'static str),

    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },

    #[error("invalid shape: {rows}x{cols} needs {expected} entries, got {got}")]
    InvalidShape {
        rows: usize,
        cols: usize,
        expected: usize,
        got: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("{0}: system is singular (use ols_solve for the unregularized problem)")]
    Singular(&'static str),

    #[error("gradient descent diverged at step {step}")]
    Diverged { step: usize },

    #[error("index out of range: {what} {index} (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
