//! Reverse-mode differentiation over dense tensors.

mod graph;
pub mod gradcheck;
pub mod kernels;

pub use graph::{Activation, GradFault, Graph, Var};
