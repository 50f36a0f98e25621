//! Training loop, evaluation metrics, checkpoints and experiment drivers.

mod checkpoint;
mod dataset;
mod evaluate;
mod metrics;
mod split;
mod tg;
mod trainer;

pub use checkpoint::{Checkpoint, ModelKind, StoredAdam, StoredParam, CHECKPOINT_VERSION};
pub use dataset::Dataset;
pub use evaluate::{evaluate, predict_counts, write_station_series, Evaluation};
pub use metrics::{compute_metrics, mae, rmse, wmape, Metrics};
pub use split::{split_days, DaySplit, TEST_DAYS};
pub use tg::{tg_experiment, TgReport, TgRow, TgSeries};
pub use trainer::{train, LossRecord, TrainConfig, TrainOutcome};

use thiserror::Error;

use crate::data::DataError;
use crate::model::ModelError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("training diverged at epoch {epoch}: {reason}")]
    NonFinite { epoch: usize, reason: String },
    #[error("unsupported checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;
