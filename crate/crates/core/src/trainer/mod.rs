//! Produces experiment records: builds networks from hyperparameter
//! configurations, trains them with SGD and momentum to a cross-entropy
//! target, evaluates train/test error and persists records and checkpoints.

mod config;
pub mod data;
mod grid;
mod record;
mod store;
mod train;

pub use config::{Axis, AxisValue, Grid, HyperparameterConfig};
pub use data::{argmax, make_dataset, teacher_network, Dataset, DatasetKind, DatasetSpec};
pub use grid::{
    build_network, checkpoint_rel_path, filter_records, load_converged, run_grid, run_one,
    SweepReport, SweepSpec,
};
pub use record::{ExperimentRecord, RECORD_SCHEMA_VERSION};
pub use store::RecordStore;
pub use train::{
    cross_entropy_and_error, evaluate_error, train, FailureReason, RunStatus, TrainOptions,
    TrainOutcome,
};

use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Data(String),
    #[error("cannot ingest {path}: {message}")]
    Ingest { path: String, message: String },
    #[error("record store line {line}: {message}")]
    Store { line: usize, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
