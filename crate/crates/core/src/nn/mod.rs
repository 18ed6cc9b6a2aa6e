//! Minimal differentiable substrate: tensors, a gradient tape, the GRU cell
//! and RMSprop.

mod graph;
mod gru;
pub mod init;
mod optim;
mod params;
mod tensor;

pub use graph::{Graph, Var};
pub use gru::GruCell;
pub use optim::RmsProp;
pub use params::{Gradients, Param, ParamId, ParamSet};
pub use tensor::Tensor;
