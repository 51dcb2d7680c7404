//! Dense tensors with reverse-mode automatic differentiation.

mod graph;
mod scalar;
mod value;

pub use graph::{conv_out_len, Graph, SharedMask, Var};
pub use scalar::Scalar;
pub use value::Tensor;
