//! Minimal dense tensors, reverse-mode autodiff, transformer layers and AdamW.

mod checkpoint;
mod graph;
pub mod nn;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::{Gradients, Graph, Var, LOG_FLOOR};
pub use optim::{AdamWConfig, OptimizerState};
pub use params::{GradBuffer, ParamId, ParamStore};
pub use tensor::{Real, Tensor};
