//! Reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records primitives as they execute. Parameters live in a
//! [`ParamStore`]; each backward pass adds into the store's gradient buffers.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::grad_check;
pub use graph::{sigmoid, stable_softmax, Graph, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
