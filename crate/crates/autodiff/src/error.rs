use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("non-finite input to {op} (strict mode)")]
    NonFinite { op: &'static str },

    #[error("backward needs a single-element tensor, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("tensors from different graphs were combined in {op}")]
    ForeignTensor { op: &'static str },

    #[error("objective is not finite at perturbation of element {index} by {step:+e}")]
    NonFiniteProbe { index: usize, step: f64 },
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
