//! Dense tensors, forward kernels and tape-based reverse-mode differentiation.

pub mod kernels;
mod tape;
mod tensor;

pub use kernels::{conv2d_same, layer_norm, masked_cross_entropy, set_parallel, softmax};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

/// `eps` used by every layer normalization in the model.
pub const LAYER_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid shape {0:?}: every dimension must be positive")]
    InvalidShape(Vec<usize>),
    #[error("axis {axis} is invalid for a rank-{rank} tensor")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("target {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },
    #[error("row index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
}

pub type Result<T, E = NumericsError> = std::result::Result<T, E>;
