//! Pretraining: configuration, learning-rate schedule, Adam, the training
//! step, checkpoints and the epoch loop.

mod checkpoint;
mod config;
mod data;
mod gradcheck;
mod optim;
mod pretrain;
mod step;

pub use checkpoint::{load_checkpoint, load_model, save_checkpoint};
pub use config::{lr_schedule, Ablation, TrainConfig};
pub use data::{FeatureStats, PreparedUtterance, TrainData};
pub use gradcheck::full_loss_gradcheck;
pub use optim::{clip_global_norm, global_norm, AdamState, ADAM_EPS, BETA1, BETA2};
pub use pretrain::{
    epoch_batches, initial_state, pretrain, pretrain_prepared, PretrainOutcome, CHECKPOINT_FILE, LOG_FILE, LOG_HEADER,
};
pub use step::{batch_loss, build_batch, train_step, StepBatch, TrainState};
