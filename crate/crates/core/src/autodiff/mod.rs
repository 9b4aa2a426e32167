//! Reverse-mode differentiation over real tensors.

mod adam;
mod graph;
mod params;
mod tensor;

pub use adam::{adam_step, Adam, Moments, OptimState, TensorAdam};
pub use graph::{Gradients, Graph, Var};
pub use params::{BoundParams, ParamSet};
pub use tensor::{pixel_unshuffle, Tensor};
