use thiserror::Error;

/// Errors produced by tensor construction, operations, and backward passes.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    /// Two operands disagree on shape where the operation needs agreement.
    #[error("{op}: shape mismatch, left {left:?} vs right {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// The operand has the wrong rank for this operation.
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    BadRank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    /// Backing data length does not match the product of the shape.
    #[error("tensor data length {got} does not match shape {shape:?} ({expected} elements)")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    /// An index or range fell outside the tensor's extent.
    #[error("{op}: range {start}..{end} out of bounds for extent {extent}")]
    OutOfRange {
        op: &'static str,
        start: usize,
        end: usize,
        extent: usize,
    },

    /// The operation saw a NaN or infinity where it cannot tolerate one.
    #[error("{op}: non-finite value in input")]
    NonFinite { op: &'static str },

    /// A configuration argument is outside its legal domain.
    #[error("{op}: {msg}")]
    BadConfig { op: &'static str, msg: String },

    /// `backward` was called on a non-scalar tensor.
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    /// Operands live on different tapes.
    #[error("{op}: operands belong to different tapes")]
    TapeMismatch { op: &'static str },

    /// A scalar read was attempted on a tensor with more than one element.
    #[error("scalar: tensor has shape {shape:?}, expected a single element")]
    NotScalar { shape: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, TensorError>;
