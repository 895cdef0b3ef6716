use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::measures::MeasureOptions;
use crate::robust_regress::SolverOptions;
use crate::trainer::{Axis, DatasetSpec, Grid, SweepSpec, TrainOptions};

use super::PipelineError;

/// Evaluation settings shared by the evaluate command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationSettings {
    pub n_eff_min: f64,
    pub noise_filter: bool,
    /// Axes to build environments on; empty means all.
    pub axes: Vec<Axis>,
    /// Percentile method used for gamma and p90; informational.
    pub percentile_method: String,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            n_eff_min: 12.0,
            noise_filter: true,
            axes: Vec::new(),
            percentile_method: "nearest_rank_lower".into(),
        }
    }
}

/// Everything that determines a pipeline run. Its hash is embedded in every
/// output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(default)]
    pub master_seed: u64,
    /// Repeat seeds; each configuration is trained once per seed.
    pub seeds: Vec<u64>,
    /// Record store, relative to the manifest file unless absolute.
    #[serde(default = "default_store")]
    pub store: PathBuf,
    #[serde(default = "yes")]
    pub bias: bool,
    pub grid: Grid,
    pub datasets: Vec<DatasetSpec>,
    #[serde(default)]
    pub train: TrainOptions,
    #[serde(default)]
    pub measures: MeasureOptions,
    #[serde(default)]
    pub evaluation: EvaluationSettings,
    #[serde(default)]
    pub regression: SolverOptions,
    /// Filled in at load time; not read from the file.
    #[serde(default, skip_deserializing)]
    pub tool_version: String,
}

fn default_store() -> PathBuf {
    PathBuf::from("store/records.jsonl")
}

fn yes() -> bool {
    true
}

impl RunManifest {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let mut m: RunManifest =
            toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        m.tool_version = env!("CARGO_PKG_VERSION").to_string();
        m.validate()?;
        Ok(m)
    }

    /// Reads a manifest; a relative store path is resolved against the
    /// manifest's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut m = Self::from_toml(&text)?;
        if m.store.is_relative() {
            if let Some(dir) = path.parent() {
                m.store = dir.join(&m.store);
            }
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.grid.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.seeds.is_empty() {
            return Err(PipelineError::Config("no seeds given".into()));
        }
        for ds in &self.grid.dataset {
            if !self.datasets.iter().any(|d| &d.id == ds) {
                return Err(PipelineError::Config(format!("grid names unknown dataset `{ds}`")));
            }
        }
        if !(self.evaluation.n_eff_min >= 0.0) {
            return Err(PipelineError::Config("n_eff_min must be nonnegative".into()));
        }
        if !(self.measures.delta > 0.0 && self.measures.epsilon >= 0.0) {
            return Err(PipelineError::Config("delta must be positive and epsilon nonnegative".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form. The store path is excluded
    /// so that moving a run does not change its identity.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.store = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("manifest serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        SweepSpec {
            grid: self.grid.clone(),
            datasets: self.datasets.clone(),
            seeds: self.seeds.clone(),
            train: self.train,
            master_seed: self.master_seed,
            bias: self.bias,
            checkpoints: true,
        }
    }

    pub fn dataset(&self, id: &str) -> Option<&DatasetSpec> {
        self.datasets.iter().find(|d| d.id == id)
    }
}
