//! Dense tensors, reverse-mode differentiation and the Adam optimizer.

mod adam;
mod graph;
mod kernels;
mod params;
#[allow(clippy::module_inception)]
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use graph::{Activation, Gradients, Graph, PoolMode, Var};
pub use params::{Bound, Init, ParamId, ParamStore};
pub use tensor::Tensor;
