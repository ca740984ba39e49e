//! Minimal reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] records every forward operation together with the activations
//! its backward pass needs. Values live in the graph nodes; a [`Var`] is a
//! handle. Binary elementwise ops broadcast rightmost-aligned, expanding size-1
//! axes. Every forward op checks its output for NaN/Inf and fails with
//! [`AutodiffError::NonFinite`].

mod graph;
mod kernels;
mod tensor;

pub use graph::{ConvSpec, Graph, Var};
pub use tensor::{numel, Tensor};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("invalid argument to {op}: {msg}")]
    Invalid { op: &'static str, msg: String },
}
