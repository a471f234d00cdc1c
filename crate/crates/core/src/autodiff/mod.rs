//! Dense tensors and tape-based reverse-mode differentiation.
//!
//! The tape records one forward pass in topological order; a single reverse
//! sweep computes gradients for every leaf marked `requires_grad`. 64-bit
//! floats throughout, and every op boundary rejects NaN/Inf instead of
//! propagating it.

mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many, relative_error};
pub use kernels::{matmul, matmul_acc, matmul_nt, matmul_nt_acc, matmul_tn_acc};
pub use tape::{BinaryKind, ReduceKind, Tape, UnaryKind, ValueId};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value rejected at {0}")]
    NonFiniteValue(&'static str),
    #[error("domain error: {0}")]
    DomainError(&'static str),
    #[error("division by zero")]
    DivisionByZero,
    #[error("invalid axis {axis} for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("backward target must be a scalar, got {0} elements")]
    NotScalar(usize),
    #[error("loss value is not recorded on this tape")]
    DetachedLoss,
}
