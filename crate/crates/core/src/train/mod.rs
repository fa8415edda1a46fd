//! Training: losses, Adam, patch sampling, and the fitting loop.

pub mod adam;
pub mod loss;
mod pipeline;
pub mod sampler;

pub use adam::{adam_step, adam_update_slice, AdamConfig, AdamState};
pub use loss::{loss_mae, loss_preact, loss_seg, loss_tv, LossBreakdown, LossWeights};
pub use pipeline::{loss_and_gradients, train, TrainConfig, TrainError};
pub use sampler::sample_patches;
