//! Mixup, effective-number focal loss, AdamW and the epoch loop.

mod adamw;
mod checkpoint;
mod config;
mod loss;
mod mixup;
mod trainer;

pub use adamw::{adamw_step, OptimizerState};
pub use checkpoint::{Checkpoint, Entry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::TrainConfig;
pub use loss::{effective_number_weights, focal_loss, ClassWeights};
pub use mixup::{mixup, sample_lambda};
pub use trainer::{
    evaluate_loss, mix_batch, train_epoch, train_step, Dataset, EpochStats, TrainState,
};
