//! Patch-correction network: a bias-free feedforward model with batch
//! normalization and residual skips, its optimizers and the training loop.

mod mlp;
mod optim;
mod train;

pub use mlp::{param_count, Activation, Arch, BatchNorm, Grads, Mlp};
pub use optim::{Adam, AdamSettings, AdamW};
pub use train::{evaluate_loss, train, Samples, TrainConfig, TrainLossMode, TrainReport};
