//! Reverse-mode differentiation over dense tensors.

mod backend;
mod gradcheck;
mod graph;

pub use backend::{Backend, Eager};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
