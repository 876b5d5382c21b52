//! Reverse-mode automatic differentiation over [`Tensor`](crate::tensor::Tensor)s.
//!
//! A [`Graph`] is a tape built while the forward pass runs; each [`Var`]
//! indexes one node. Spatial tensors are channels-last `(b, h, w, c)`.

mod check;
mod elementwise;
mod graph;
mod linalg;
mod nn;
mod shape;

pub use check::{finite_difference_check, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use nn::{BatchMoments, NormStats};
