//! Reverse-mode automatic differentiation over a recorded graph.

mod conv;
mod graph;
pub(crate) use graph::space_to_depth_perm;
pub mod gradcheck;

pub use graph::{Activation, Ewise, Gradients, Graph, Var};
