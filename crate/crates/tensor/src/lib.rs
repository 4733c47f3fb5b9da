//! Minimal dense tensors with reverse-mode automatic differentiation.
//!
//! [`Tensor`] is a plain row-major array. Differentiable computation is
//! recorded on a [`Graph`], which hands out [`Var`] handles; calling
//! [`Graph::backward`] on a scalar node fills the gradients of every leaf
//! that was registered with `requires_grad`.

mod element;
mod error;
mod graph;
pub mod kernels;
mod tensor;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use graph::{BinaryKind, Graph, Var};
pub use tensor::Tensor;
