//! Dense tensors with reverse-mode gradients.

pub mod graph;
pub mod kernels;
pub mod params;
pub mod tensor;

pub use graph::{Graph, Var};
pub use params::{Init, ParamId, ParamLayout, ParamSet, ParamSpec};
pub use tensor::{lit, Real, Tensor};
