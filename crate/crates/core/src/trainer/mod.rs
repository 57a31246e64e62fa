//! Adam training with plateau learning-rate decay, early stopping, a
//! stratified validation split and best-epoch restore.

pub mod adam;
pub mod config;
pub mod fit;
pub mod history;
pub mod schedule;
pub mod split;

pub use adam::{adam_step, AdamState};
pub use config::{AdamConfig, TrainConfig};
pub use fit::{
    batch_loss, evaluate_losses, make_batches, overfit, run_schedule, train, EpochLosses,
    EpochRunner, ModelRunner, OverfitReport, Sample, BEST_CKPT, CONFIG_TOML, FINAL_CKPT,
    HISTORY_CSV,
};
pub use history::{EpochRecord, StopReason, TrainHistory};
pub use schedule::{EarlyStopper, PlateauScheduler};
pub use split::split_train_val;
