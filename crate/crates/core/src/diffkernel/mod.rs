//! Minimal reverse-mode differentiable array engine.
//!
//! Everything the neural operators need and nothing more: dense and
//! pointwise layers, strided 1-D (transposed) convolution, ReLU, real DFTs
//! (full and mode-truncated), complex per-bin channel mixing, reductions and
//! an Adam optimizer.

mod adam;
mod graph;
pub(crate) mod linalg;
mod real;
pub mod spectral;
mod tensor;

pub use adam::AdamState;
pub use graph::{Gradients, Graph, Var};
pub use real::{DType, Real};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("shape {shape:?} does not match {len} data elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("cannot reshape {from:?} into {to:?}")]
    Reshape { from: Vec<usize>, to: Vec<usize> },
    #[error("{op}: {detail}")]
    Geometry { op: &'static str, detail: String },
    #[error("{modes} modes requested but only {max} bins exist")]
    ModeOverflow { modes: usize, max: usize },
    #[error("{op}: index {index} out of range for extent {extent}")]
    Index {
        op: &'static str,
        index: usize,
        extent: usize,
    },
    #[error("{0}: no inputs")]
    Empty(&'static str),
    #[error("backward needs a one-element loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("tape already consumed by backward; rebuild the forward pass")]
    TapeConsumed,
}
