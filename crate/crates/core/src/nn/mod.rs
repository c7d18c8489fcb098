//! From-scratch neural networks: batched layers with explicit backward passes,
//! Adam, and the training loop.

pub mod adam;
pub mod checkpoint;
mod gemm;
pub mod layers;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use model::{ModelSpec, Network, Objective};
pub use tensor::Tensor;
pub use train::{predict, predict_classes, train, History, TrainOptions, Trained, Trainer};
