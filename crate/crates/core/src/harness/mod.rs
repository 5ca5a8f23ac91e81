//! Training loop, experiment matrix and metric persistence.

pub mod config;
pub mod matrix;
pub mod optim;
pub mod train;

pub use config::{DatasetSource, ExperimentConfig, TrainConfig};
pub use matrix::{headline, run_matrix, table2, table2_full, SummaryRow};
pub use optim::{poly_lr, sgd_step, GroupMultipliers, SgdConfig};
pub use train::{
    emit_metrics, evaluate, load_splits, run_experiment, train_epoch, EpochMetrics, Splits,
    TrainState,
};
