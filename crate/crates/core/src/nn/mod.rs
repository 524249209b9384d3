//! Minimal CPU tensor engine: a tape of differentiable ops and the Adam
//! optimizer. Convolutions lower to `im2col` + SGEMM.

mod graph;
mod optim;
mod tensor;

pub use graph::{Gradients, Graph, NodeId};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;
