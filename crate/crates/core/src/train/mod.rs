//! Objectives, AdamW and the training loop.

mod fit;
pub mod gradcheck;
mod loss;
mod optim;

pub use fit::{
    batch_gradients, dev_metric, ensure_norm_stats, targets, train, train_with, AuxLoss, EpochRecord, Objective,
    Prepared, TrainConfig, TrainHistory,
};
pub use loss::{bce_loss, bce_loss_grad, mse_loss, mse_loss_grad};
pub use optim::{adamw_step, AdamState, OptimizerConfig};

#[cfg(test)]
mod tests;
