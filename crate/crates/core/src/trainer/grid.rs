//! Resumable sweeps over a hyperparameter grid.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::nn::{Checkpoint, CheckpointMeta, LayerSpec, Network};
use crate::seed::derive_seed;

use super::data::{make_dataset, Dataset, DatasetSpec};
use super::train::{evaluate_error, train, RunStatus, TrainOptions};
use super::{ExperimentRecord, Grid, HyperparameterConfig, RecordStore, TrainerError, RECORD_SCHEMA_VERSION};

/// Everything a sweep needs besides the store.
#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub grid: Grid,
    pub datasets: Vec<DatasetSpec>,
    pub seeds: Vec<u64>,
    pub train: TrainOptions,
    pub master_seed: u64,
    pub bias: bool,
    /// Save a checkpoint next to the store for each run.
    pub checkpoints: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub new_records: usize,
    pub skipped: usize,
    pub converged: usize,
    pub failed: usize,
    /// Per-record I/O failures; the sweep continues past them.
    pub io_errors: Vec<(String, u64, String)>,
}

/// Builds the dense ReLU network for a configuration: `depth` weight layers,
/// `width` hidden units, input and output sizes from the dataset.
pub fn build_network(
    config: &HyperparameterConfig,
    dataset: &DatasetSpec,
    bias: bool,
    seed: u64,
) -> Result<Network, TrainerError> {
    if config.depth == 0 || config.width == 0 {
        return Err(TrainerError::Config("depth and width must be positive".into()));
    }
    let mut specs = Vec::with_capacity(config.depth);
    let mut fan_in = dataset.input_dim;
    for _ in 1..config.depth {
        specs.push(LayerSpec::dense(fan_in, config.width, bias));
        fan_in = config.width;
    }
    specs.push(LayerSpec::dense(fan_in, dataset.num_classes, bias));
    Ok(Network::he_init(&specs, seed)?)
}

/// Trains one `(config, seed)` pair and returns its record and network.
pub fn run_one(
    config: &HyperparameterConfig,
    seed: u64,
    dataset: &DatasetSpec,
    train_set: &Dataset,
    test_set: &Dataset,
    spec: &SweepSpec,
) -> Result<(ExperimentRecord, Network), TrainerError> {
    let id = config.id();
    let master = spec.master_seed.to_string();
    let s = seed.to_string();
    let net = build_network(config, dataset, spec.bias, derive_seed(&["init", &master, &id, &s]))?;
    let outcome = train(
        net,
        train_set,
        config.learning_rate,
        &spec.train,
        derive_seed(&["sgd", &master, &id, &s]),
    )?;
    let test_error = evaluate_error(&outcome.network, test_set)?;
    let record = ExperimentRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        config: config.clone(),
        seed,
        status: outcome.status,
        failure: outcome.failure,
        train_error: outcome.train_error,
        test_error,
        gap: test_error - outcome.train_error,
        final_cross_entropy: outcome
            .final_cross_entropy
            .is_finite()
            .then_some(outcome.final_cross_entropy),
        train_set_size: train_set.len(),
        test_set_size: test_set.len(),
        epochs: outcome.epochs,
        checkpoint: None,
        measures: Default::default(),
    };
    Ok((record, outcome.network))
}

/// Relative checkpoint path for a run.
pub fn checkpoint_rel_path(config: &HyperparameterConfig, seed: u64) -> String {
    format!(
        "checkpoints/{:016x}.ckpt",
        derive_seed(&["checkpoint", &config.id(), &seed.to_string()])
    )
}

/// Runs every `(config, seed)` pair not already in the store, appending
/// records in grid order. Failed runs are kept and flagged.
pub fn run_grid(spec: &SweepSpec, store: &RecordStore) -> Result<SweepReport, TrainerError> {
    spec.grid.validate()?;
    if spec.seeds.is_empty() {
        return Err(TrainerError::Config("no seeds given".into()));
    }
    let by_id: HashMap<&str, &DatasetSpec> =
        spec.datasets.iter().map(|d| (d.id.as_str(), d)).collect();
    for ds in &spec.grid.dataset {
        if !by_id.contains_key(ds.as_str()) {
            return Err(TrainerError::Config(format!("grid names unknown dataset `{ds}`")));
        }
    }

    let done: HashSet<(String, u64)> = store.load()?.iter().map(|r| r.key()).collect();
    let mut report = SweepReport::default();
    let mut pending = Vec::new();
    for config in spec.grid.configs() {
        for &seed in &spec.seeds {
            if done.contains(&(config.id(), seed)) {
                report.skipped += 1;
            } else {
                pending.push((config.clone(), seed));
            }
        }
    }

    let mut data_cache: HashMap<(String, usize), Arc<(Dataset, Dataset)>> = HashMap::new();
    for (config, _) in &pending {
        let key = (config.dataset.clone(), config.train_size);
        if !data_cache.contains_key(&key) {
            let ds = by_id[config.dataset.as_str()];
            let sets = make_dataset(ds, config.train_size, ds.test_size, ds.generator_seed)?;
            data_cache.insert(key, Arc::new(sets));
        }
    }

    let root = store.root();
    let chunk = (rayon::current_num_threads() * 4).max(8);
    for batch in pending.chunks(chunk) {
        let results: Vec<Result<(ExperimentRecord, Option<String>), TrainerError>> = batch
            .par_iter()
            .map(|(config, seed)| {
                let ds = by_id[config.dataset.as_str()];
                let sets = &data_cache[&(config.dataset.clone(), config.train_size)];
                let (mut record, net) = run_one(config, *seed, ds, &sets.0, &sets.1, spec)?;
                let mut io_error = None;
                if spec.checkpoints {
                    let rel = checkpoint_rel_path(config, *seed);
                    let ck = Checkpoint {
                        meta: CheckpointMeta {
                            config_id: config.id(),
                            seed: *seed,
                        },
                        network: net,
                    };
                    match ck.save(&root.join(&rel)) {
                        Ok(()) => record.checkpoint = Some(rel),
                        Err(e) => io_error = Some(e.to_string()),
                    }
                }
                Ok((record, io_error))
            })
            .collect();
        let mut records = Vec::with_capacity(results.len());
        for r in results {
            let (record, io_error) = r?;
            if let Some(msg) = io_error {
                log::warn!("checkpoint write failed for {} seed {}: {msg}", record.config.id(), record.seed);
                report.io_errors.push((record.config.id(), record.seed, msg));
            }
            match record.status {
                RunStatus::Converged => report.converged += 1,
                RunStatus::Failed => report.failed += 1,
            }
            records.push(record);
        }
        store.append(&records)?;
        report.new_records += records.len();
    }
    Ok(report)
}

/// Keeps converged records only.
pub fn filter_records(records: Vec<ExperimentRecord>) -> (Vec<ExperimentRecord>, usize) {
    let before = records.len();
    let kept: Vec<_> = records.into_iter().filter(|r| r.is_converged()).collect();
    let removed = before - kept.len();
    if kept.is_empty() && before > 0 {
        log::warn!("all {before} records failed the convergence criteria");
    }
    (kept, removed)
}

/// Converged runs loaded from a path, for callers that only need analysis.
pub fn load_converged(path: &Path) -> Result<Vec<ExperimentRecord>, TrainerError> {
    Ok(filter_records(RecordStore::new(path).load()?).0)
}
