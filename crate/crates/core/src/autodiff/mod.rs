//! Define-by-run reverse-mode differentiation over dense `f64` tensors.

mod graph;
pub mod gradcheck;
mod ops;

pub use graph::{BackwardFn, Gradients, Graph, Var};
pub use ops::{nats_to_bits, LAYER_NORM_EPS};
