//! SGD training: optimizer, plateau schedule, epoch loop, checkpoints and
//! the metrics log.

mod checkpoint;
mod fit;
mod metrics;
mod schedule;
mod sgd;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, VELOCITY_PREFIX,
};
pub use fit::{
    argmax, evaluate_clips, fit, run_epoch, train_epoch, EpochStats, TrainConfig, TrainState, DEFAULT_BATCH_SIZE,
    DEFAULT_MAX_EPOCHS,
};
pub use metrics::{format_metrics_line, parse_metrics, MetricsLog, METRICS_HEADER};
pub use schedule::{PlateauSchedule, DEFAULT_MIN_DELTA, DEFAULT_PATIENCE, MAX_LR_DROPS};
pub use sgd::{sgd_update, Sgd, DEFAULT_LR, DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY};
