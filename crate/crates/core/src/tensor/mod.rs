//! Tensors and the reverse-mode autodiff engine.

mod graph;
mod kernels;
mod value;

pub use graph::{GradientMap, Graph, Var};

pub use value::Tensor;
