//! Error type shared by all modules of the core crate.

use alloc::string::String;

/// Errors surfaced by tensor, FFN, sparsity, predictor, and affinity code.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CoreError {
    /// Operand shapes are incompatible (e.g. `matvec` with `m.cols != v.len`).
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A neuron/layer/token index is outside the valid range.
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    /// An operation that needs at least one element got none.
    #[error("empty input: {0}")]
    EmptyInput(String),
    /// A value that must be finite is NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),
    /// An argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}")]
    Divergence { step: usize },
}

pub type Result<T> = core::result::Result<T, CoreError>;
