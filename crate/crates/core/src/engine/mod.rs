//! Dense tensors and a small reverse-mode differentiation engine.

pub mod checkpoint;
mod gradcheck;
mod graph;
pub mod loss;
mod tensor;

pub use gradcheck::{finite_difference_check, GradCheckReport};
pub use graph::{
    Activations, BackwardMode, Gradients, Graph, GraphBuilder, NodeId, Param, Selector,
};
pub use tensor::Tensor;
