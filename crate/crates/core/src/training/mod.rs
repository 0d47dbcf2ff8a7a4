//! Dual learning-rate Adam training with gradient accumulation, stepped
//! decay, checkpoints and ROUGE-2 early stopping.

pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod schedule;
pub mod trainer;

pub use checkpoint::{checkpoint_dtype, Checkpoint, RngState, TrainState};
pub use config::TrainConfig;
pub use experiment::{train_and_test, RunOutcome};
pub use schedule::lr_at_epoch;
pub use trainer::{
    decode_all, BeamValidator, EpochRecord, TrainOutcome, Trainer, Validator, BEST_CHECKPOINT, HISTORY_FILE, LAST_CHECKPOINT,
};
