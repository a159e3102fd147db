//! Minimal differentiable arrays: exactly the operations the model needs.

mod array;
mod gradcheck;
mod graph;
pub(crate) mod kernels;

pub use array::{DType, Element, NdArray};
pub use gradcheck::{grad_check, GradCheck};
pub use graph::{conv_out_len, Gradients, Graph, Var};

/// Default layer-norm epsilon.
pub const LAYER_NORM_EPS: f64 = 1e-5;
