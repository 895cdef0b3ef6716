#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robustgen_core::measures::MeasureVector;
use robustgen_core::trainer::{ExperimentRecord, HyperparameterConfig, RunStatus, RECORD_SCHEMA_VERSION};

pub fn config(lr: f64, depth: usize, width: usize, train_size: usize) -> HyperparameterConfig {
    HyperparameterConfig {
        learning_rate: lr,
        depth,
        width,
        dataset: "synthetic".into(),
        train_size,
    }
}

pub fn record(config: HyperparameterConfig, seed: u64, gap: f64, m_test: usize) -> ExperimentRecord {
    ExperimentRecord {
        schema_version: RECORD_SCHEMA_VERSION,
        config,
        seed,
        status: RunStatus::Converged,
        failure: None,
        train_error: 0.0,
        test_error: gap,
        gap,
        final_cross_entropy: Some(0.01),
        train_set_size: 100,
        test_set_size: m_test,
        epochs: 1,
        checkpoint: None,
        measures: MeasureVector::new(),
    }
}

/// Records over a depth x train-size grid with `seeds` seeds each. The gap
/// grows with depth and shrinks with train size, plus seed noise of the
/// given amplitude.
pub fn synthetic_grid(
    depths: &[usize],
    sizes: &[usize],
    seeds: u64,
    noise: f64,
    m_test: usize,
    rng_seed: u64,
) -> Vec<ExperimentRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::new();
    for &d in depths {
        for &n in sizes {
            for s in 0..seeds {
                let base = 0.05 * d as f64 + 5.0 / n as f64;
                let gap = base + noise * (rng.random::<f64>() - 0.5);
                out.push(record(config(0.1, d, 16, n), s, gap, m_test));
            }
        }
    }
    out
}
