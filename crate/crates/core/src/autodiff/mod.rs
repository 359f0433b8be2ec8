//! Dense tensors with tape-based reverse-mode differentiation.

mod gradcheck;
mod graph;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with_fault};
pub use graph::{cosine_similarity, Gradients, Graph, OpKind, Var};
pub use tensor::Tensor;
