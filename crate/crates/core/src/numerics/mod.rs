//! Dense tensors, a tape-based reverse-mode differentiation graph, the special
//! functions the evidential losses need, and the Adam optimizer.
//!
//! Everything is `f64`. A [`Graph`] is built fresh for every training step and
//! confined to the thread that built it; [`Tensor`] values are plain data and
//! can move freely between threads.

mod adam;
mod graph;
pub mod special;
mod tensor;

pub use adam::{AdamConfig, AdamState, Param};
pub use graph::{Graph, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: input {value} is outside the function's domain")]
    Domain { op: &'static str, value: f64 },
    #[error("{op}: {message}")]
    Parameter { op: &'static str, message: String },
    #[error("backward needs a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },
}

pub type Result<T> = std::result::Result<T, NumericsError>;
