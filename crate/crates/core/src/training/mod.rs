//! Optimizers, schedules, both training loops and checkpoint files.

mod checkpoint;
mod config;
mod early;
mod log;
mod loops;
mod loss;
mod optim;

pub use checkpoint::{checkpoint_dtype, Checkpoint, CheckpointConfig, RngState, FORMAT_VERSION, MAGIC};
pub use config::{Phase, TrainConfig};
pub use early::{EarlyStopping, Verdict};
pub use log::{strip_wall_clock, LogRow, TrainLog, LOG_HEADER};
pub use loops::{
    batch_gradients, finetune, finetune_loss, pretrain, pretrain_loss, validation_loss, BatchGradients, EpochStats,
    FinetuneOutcome, PretrainOutcome,
};
pub use loss::{masked_mse_loss, mse_loss};
pub use optim::{
    adam_step, adamw_step, clip_grad_norm, cosine_lr, exponential_lr, exponential_lr_with, scaled_lr, AdamParams,
    AdamState, Schedule,
};
