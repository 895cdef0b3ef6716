//! Commands tying the modules together: sweep, measure, evaluate, regress
//! and report. Every CSV row carries the manifest hash.

mod manifest;
mod report;

pub use manifest::{EvaluationSettings, RunManifest};
pub use report::{render_markdown, render_svg, ReportInputs};

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::measures::{measure_network, MeasureError, MeasureId, SigmaBound};
use crate::nn::Checkpoint;
use crate::robust_eval::{
    build_coupled_environments, build_weak_environments, evaluate_environments, gaps, measure_columns,
    standard_families, summarize_all, Environment, SignErrorOptions,
};
use crate::robust_regress::{build_regression_environments, regression_report, FamilyKind};
use crate::trainer::{
    filter_records, make_dataset, run_grid, Axis, Dataset, ExperimentRecord, RecordStore, SweepReport,
    TrainerError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no data: {0}")]
    EmptyData(String),
    #[error("malformed input: {0}")]
    Malformed(String),
    #[error(transparent)]
    Trainer(#[from] TrainerError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit code: 2 configuration, 3 empty data, 4 malformed input,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Trainer(TrainerError::Config(_)) => 2,
            PipelineError::EmptyData(_) => 3,
            PipelineError::Malformed(_) | PipelineError::Trainer(TrainerError::Store { .. }) => 4,
            _ => 1,
        }
    }
}

pub const SIGN_ERRORS_CSV: &str = "sign_errors.csv";
pub const FAMILY_SUMMARY_CSV: &str = "family_summary.csv";
pub const SKIPPED_CSV: &str = "skipped_environments.csv";
pub const REPORT_SVG: &str = "report.svg";
pub const REPORT_MD: &str = "report.md";

pub fn regression_csv_name(kind: FamilyKind) -> String {
    format!("regression_{}.csv", kind.name())
}

/// Trains every missing `(config, seed)` pair into the store.
pub fn cmd_generate(manifest: &RunManifest, store: &Path) -> Result<SweepReport, PipelineError> {
    Ok(run_grid(&manifest.sweep_spec(), &RecordStore::new(store))?)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct MeasureReport {
    pub processed: usize,
    /// Converged records whose checkpoint could not be used.
    pub skipped: Vec<(String, u64, String)>,
    /// Records with an undefined value, per measure.
    pub undefined: BTreeMap<String, usize>,
    /// Flatness searches that ended at a bracket limit.
    pub searches_at_bound: usize,
}

/// Recomputes the measure vector of every converged record from its
/// checkpoint and rewrites the store.
pub fn cmd_measure(manifest: &RunManifest, store: &Path) -> Result<MeasureReport, PipelineError> {
    let store = RecordStore::new(store);
    let mut records = store.load()?;
    if records.is_empty() {
        return Err(PipelineError::EmptyData(format!("{} has no records", store.path().display())));
    }
    let root = store.root();

    let mut data: HashMap<(String, usize), Arc<Dataset>> = HashMap::new();
    for r in records.iter().filter(|r| r.is_converged()) {
        let key = (r.config.dataset.clone(), r.config.train_size);
        if data.contains_key(&key) {
            continue;
        }
        let Some(spec) = manifest.dataset(&key.0) else {
            return Err(PipelineError::Config(format!("record uses unknown dataset `{}`", key.0)));
        };
        let (train, _) = make_dataset(spec, key.1, spec.test_size, spec.generator_seed)?;
        data.insert(key, Arc::new(train));
    }

    let opts = manifest.measures;
    let results: Vec<Option<Result<(crate::measures::MeasureVector, usize), String>>> = records
        .par_iter()
        .map(|r| {
            if !r.is_converged() {
                return None;
            }
            let Some(rel) = &r.checkpoint else {
                return Some(Err("record has no checkpoint".to_string()));
            };
            let ck = match Checkpoint::load(&root.join(rel)) {
                Ok(c) => c,
                Err(e) => return Some(Err(format!("checkpoint {rel}: {e}"))),
            };
            let train = &data[&(r.config.dataset.clone(), r.config.train_size)];
            let run_key = format!("{}#{}", r.config.id(), r.seed);
            Some(
                measure_network(&ck.network, train, &opts, &run_key)
                    .map(|(v, rep)| {
                        let at_bound = [rep.sigma, rep.sigma_mag]
                            .iter()
                            .flatten()
                            .filter(|s| s.bound != SigmaBound::Interior)
                            .count();
                        (v, at_bound)
                    })
                    .map_err(|e| e.to_string()),
            )
        })
        .collect();

    let mut report = MeasureReport::default();
    for (r, res) in records.iter_mut().zip(results) {
        match res {
            None => {}
            Some(Ok((v, at_bound))) => {
                for (id, val) in &v {
                    if val.is_none() {
                        *report.undefined.entry(id.name().to_string()).or_default() += 1;
                    }
                }
                r.measures = v;
                report.processed += 1;
                report.searches_at_bound += at_bound;
            }
            Some(Err(msg)) => {
                log::warn!("skipping {} seed {}: {msg}", r.config.id(), r.seed);
                report.skipped.push((r.config.id(), r.seed, msg));
            }
        }
    }
    store.replace_all(&records)?;
    Ok(report)
}

/// Flags of the evaluate command.
#[derive(Debug, Clone, Default)]
pub struct EvaluateArgs {
    /// Overrides the manifest's axes when nonempty.
    pub axes: Vec<Axis>,
    pub n_eff_min: Option<f64>,
    pub no_noise_filter: bool,
    pub weak: bool,
    /// Dataset ids to keep; empty keeps all.
    pub subset: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignErrorRow {
    pub manifest_hash: String,
    pub env_id: String,
    pub axis: String,
    pub from: String,
    pub to: String,
    pub weak: bool,
    pub m_test: usize,
    pub measure: String,
    pub n_pairs_used: usize,
    pub n_pairs_dropped: usize,
    pub n_eff: f64,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub manifest_hash: String,
    pub family: String,
    pub measure: String,
    pub n_envs: usize,
    pub n_retained: usize,
    pub median: Option<f64>,
    pub mean: Option<f64>,
    pub p90: Option<f64>,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub manifest_hash: String,
    pub axis: String,
    pub slice: String,
    pub from: String,
    pub to: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionCsvRow {
    pub manifest_hash: String,
    pub measure: String,
    pub a: f64,
    pub b: f64,
    pub robust_rmse: f64,
    pub mean_rmse: f64,
    pub baseline_robust_rmse: f64,
    pub family_kind: String,
    pub n_envs: usize,
    pub n_envs_dropped: usize,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct EvaluateReport {
    pub records: usize,
    pub removed_failed: usize,
    pub environments: usize,
    pub skipped_environments: usize,
    pub files: Vec<PathBuf>,
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(csv_io)?;
    for r in rows {
        w.serialize(r).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> PipelineError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => PipelineError::Io(io),
        other => PipelineError::Malformed(format!("{other:?}")),
    }
}

/// Reads rows of a CSV written by this module.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| PipelineError::Malformed(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(|e| PipelineError::Malformed(format!("{}: {e}", path.display())))
}

/// Converged records of the store, optionally restricted to some datasets.
fn analysis_records(store: &Path, subset: &[String]) -> Result<(Vec<ExperimentRecord>, usize), PipelineError> {
    let all = RecordStore::new(store).load()?;
    if all.is_empty() {
        return Err(PipelineError::EmptyData(format!("{} has no records", store.display())));
    }
    let (mut kept, removed) = filter_records(all);
    if !subset.is_empty() {
        kept.retain(|r| subset.contains(&r.config.dataset));
    }
    if kept.is_empty() {
        return Err(PipelineError::EmptyData("no converged records to analyse".into()));
    }
    Ok((kept, removed))
}

/// Sign-errors per environment and family summaries for every measure.
pub fn cmd_evaluate(
    manifest: &RunManifest,
    store: &Path,
    args: &EvaluateArgs,
    out: &Path,
) -> Result<EvaluateReport, PipelineError> {
    let hash = manifest.hash();
    let (records, removed) = analysis_records(store, &args.subset)?;
    let axes: Vec<Axis> = if !args.axes.is_empty() {
        args.axes.clone()
    } else if !manifest.evaluation.axes.is_empty() {
        manifest.evaluation.axes.clone()
    } else {
        Axis::ALL.to_vec()
    };
    let opts = SignErrorOptions {
        n_eff_min: args.n_eff_min.unwrap_or(manifest.evaluation.n_eff_min),
        noise_filter: manifest.evaluation.noise_filter && !args.no_noise_filter,
    };
    let set = build_coupled_environments(&records, &axes);
    for w in &set.warnings {
        log::warn!("{w}");
    }
    let envs: Vec<Environment> = if args.weak {
        build_weak_environments(&set.environments)
    } else {
        set.environments.clone()
    };
    if envs.is_empty() {
        return Err(PipelineError::EmptyData("no environments could be formed".into()));
    }
    let g = gaps(&records);
    let columns = measure_columns(&records);
    let stats = evaluate_environments(&envs, &g, &columns, &opts);

    let sign_rows: Vec<SignErrorRow> = stats
        .iter()
        .map(|s| {
            let e = &envs[s.env];
            SignErrorRow {
                manifest_hash: hash.clone(),
                env_id: e.id.clone(),
                axis: e.axis.name().into(),
                from: e.value_pair.0.to_string(),
                to: e.value_pair.1.to_string(),
                weak: e.weak,
                m_test: e.m_test,
                measure: s.measure.clone(),
                n_pairs_used: s.n_pairs_used,
                n_pairs_dropped: s.n_pairs_dropped,
                n_eff: s.n_eff,
                value: s.value,
            }
        })
        .collect();
    let measures: Vec<String> = MeasureId::ALL.iter().map(|m| m.name().to_string()).collect();
    let summaries = summarize_all(&standard_families(&envs), &envs, &stats, &measures);
    let summary_rows: Vec<SummaryRow> = summaries
        .into_iter()
        .map(|s| SummaryRow {
            manifest_hash: hash.clone(),
            family: s.family,
            measure: s.measure,
            n_envs: s.n_envs,
            n_retained: s.n_retained,
            median: s.median,
            mean: s.mean,
            p90: s.p90,
            max: s.max,
        })
        .collect();
    let skipped_rows: Vec<SkippedRow> = set
        .skipped
        .iter()
        .map(|s| SkippedRow {
            manifest_hash: hash.clone(),
            axis: s.axis.name().into(),
            slice: s.slice.clone(),
            from: s.value_pair.0.clone(),
            to: s.value_pair.1.clone(),
            reason: s.reason.clone(),
        })
        .collect();

    let files = vec![out.join(SIGN_ERRORS_CSV), out.join(FAMILY_SUMMARY_CSV), out.join(SKIPPED_CSV)];
    write_csv(&files[0], &sign_rows)?;
    write_csv(&files[1], &summary_rows)?;
    write_csv(&files[2], &skipped_rows)?;
    Ok(EvaluateReport {
        records: records.len(),
        removed_failed: removed,
        environments: envs.len(),
        skipped_environments: set.skipped.len(),
        files,
    })
}

/// Robust regression of the gap on every measure, one CSV per family kind.
pub fn cmd_regress(
    manifest: &RunManifest,
    store: &Path,
    kinds: &[FamilyKind],
    subset: &[String],
    out: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    let hash = manifest.hash();
    let (records, _) = analysis_records(store, subset)?;
    let g = gaps(&records);
    let columns = measure_columns(&records);
    let mut files = Vec::new();
    for &kind in kinds {
        let family = build_regression_environments(&records, kind);
        let rows = regression_report(&family, &g, &columns, &manifest.regression)
            .map_err(PipelineError::EmptyData)?;
        let rows: Vec<RegressionCsvRow> = rows
            .into_iter()
            .map(|r| RegressionCsvRow {
                manifest_hash: hash.clone(),
                measure: r.measure,
                a: r.a,
                b: r.b,
                robust_rmse: r.robust_rmse,
                mean_rmse: r.mean_rmse,
                baseline_robust_rmse: r.baseline_robust_rmse,
                family_kind: kind.name().into(),
                n_envs: r.n_envs,
                n_envs_dropped: r.n_envs_dropped,
                degenerate: r.degenerate,
            })
            .collect();
        let path = out.join(regression_csv_name(kind));
        write_csv(&path, &rows)?;
        files.push(path);
    }
    Ok(files)
}

/// Renders the SVG and markdown summaries from evaluation (and optional
/// regression) CSVs. Inputs must share one manifest hash, which must equal
/// `expected_hash` when given.
pub fn cmd_report(
    summary_csv: &Path,
    regression_csvs: &[PathBuf],
    expected_hash: Option<&str>,
    out: &Path,
) -> Result<Vec<PathBuf>, PipelineError> {
    let summaries: Vec<SummaryRow> = read_csv(summary_csv)?;
    if summaries.is_empty() {
        return Err(PipelineError::EmptyData(format!("{} has no rows", summary_csv.display())));
    }
    let mut regressions = Vec::new();
    for p in regression_csvs {
        regressions.extend(read_csv::<RegressionCsvRow>(p)?);
    }
    let hash = summaries[0].manifest_hash.clone();
    let mismatch = summaries
        .iter()
        .map(|r| &r.manifest_hash)
        .chain(regressions.iter().map(|r| &r.manifest_hash))
        .any(|h| *h != hash);
    if mismatch {
        return Err(PipelineError::Malformed("inputs come from different manifests".into()));
    }
    if let Some(want) = expected_hash {
        if want != hash {
            return Err(PipelineError::Malformed(format!(
                "inputs carry manifest hash {hash}, expected {want}"
            )));
        }
    }
    let inputs = ReportInputs {
        manifest_hash: hash,
        summaries,
        regressions,
    };
    fs::create_dir_all(out)?;
    let svg = out.join(REPORT_SVG);
    let md = out.join(REPORT_MD);
    fs::write(&svg, render_svg(&inputs))?;
    fs::write(&md, render_markdown(&inputs))?;
    Ok(vec![svg, md])
}
