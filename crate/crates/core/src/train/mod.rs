//! Configuration, optimization, evaluation, checkpoints and the ablation harness.

pub mod ablation;
pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod trainer;

pub use ablation::{run_ablation_table, AblationRow, AblationTable};
pub use adam::{adam_step, Adam, AdamConfig, Moments};
pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use metrics::{EvalReport, LabelCounts, MetricMode, Prf, TaskCounts, TaskReport};
pub use trainer::{
    evaluate, load_data, prepare, split_train_dev, train, EpochRecord, PreparedData, TrainOutcome,
    Trainer,
};
