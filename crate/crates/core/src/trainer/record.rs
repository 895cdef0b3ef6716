use serde::{Deserialize, Serialize};

use crate::measures::MeasureVector;

use super::{FailureReason, HyperparameterConfig, RunStatus};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

/// One completed training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema_version: u32,
    pub config: HyperparameterConfig,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureReason>,
    pub train_error: f64,
    pub test_error: f64,
    /// `test_error - train_error`, stored exactly as computed.
    pub gap: f64,
    /// Full-train-set cross-entropy at stop; absent when the run diverged.
    pub final_cross_entropy: Option<f64>,
    pub train_set_size: usize,
    pub test_set_size: usize,
    pub epochs: usize,
    /// Checkpoint path relative to the store's directory.
    #[serde(default)]
    pub checkpoint: Option<String>,
    #[serde(default)]
    pub measures: MeasureVector,
}

impl ExperimentRecord {
    /// Key identifying the run within a sweep.
    pub fn key(&self) -> (String, u64) {
        (self.config.id(), self.seed)
    }

    pub fn is_converged(&self) -> bool {
        self.status == RunStatus::Converged
    }

    pub fn measure(&self, id: crate::measures::MeasureId) -> Option<f64> {
        self.measures.get(&id).copied().flatten()
    }
}
