use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robustgen_core::pipeline::{
    cmd_evaluate, cmd_generate, cmd_measure, cmd_regress, cmd_report, regression_csv_name, EvaluateArgs,
    PipelineError, RunManifest, FAMILY_SUMMARY_CSV,
};
use robustgen_core::robust_regress::FamilyKind;
use robustgen_core::trainer::Axis;

/// Trains small networks over a hyperparameter grid, computes
/// generalization measures and evaluates them with robust sign-errors and
/// robust regression.
#[derive(Parser)]
#[command(name = "robustgen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run manifest (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Record store; defaults to the manifest's `store`.
    #[arg(long)]
    store: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every missing (configuration, seed) pair into the store.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Recompute all measures from checkpoints.
    Measure {
        #[command(flatten)]
        common: Common,
    },
    /// Sign-errors per environment and family summaries.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated axes (lr, depth, width, dataset, train_size).
        #[arg(long, value_delimiter = ',')]
        axes: Vec<String>,
        #[arg(long)]
        n_eff_min: Option<f64>,
        /// Weight every pair equally instead of by Monte Carlo confidence.
        #[arg(long)]
        no_noise_filter: bool,
        /// Merge environments sharing a value pair across the other axes.
        #[arg(long)]
        weak: bool,
        /// Comma-separated dataset ids to keep.
        #[arg(long, value_delimiter = ',')]
        subset: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Robust affine regression of the gap on each measure.
    Regress {
        #[command(flatten)]
        common: Common,
        /// per_config, single_axis_varies, all_but_one_fixed or all.
        #[arg(long, default_value = "all")]
        family: String,
        #[arg(long, value_delimiter = ',')]
        subset: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// SVG and markdown summaries from evaluation CSVs.
    Report {
        /// Directory for the outputs; also where inputs are looked up when
        /// none are given.
        #[arg(long)]
        out: PathBuf,
        /// When given, inputs must carry this manifest's hash.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Family summary CSV followed by any regression CSVs.
        inputs: Vec<PathBuf>,
    },
}

fn load_manifest(path: &Path) -> Result<RunManifest, PipelineError> {
    let mut m = RunManifest::load(path)?;
    if let Ok(seed) = std::env::var("ROBUSTGEN_SEED") {
        m.master_seed = seed
            .trim()
            .parse()
            .map_err(|_| PipelineError::Config(format!("ROBUSTGEN_SEED `{seed}` is not an unsigned integer")))?;
    }
    Ok(m)
}

fn store_path(common: &Common, m: &RunManifest) -> PathBuf {
    common.store.clone().unwrap_or_else(|| m.store.clone())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Generate { common } => {
            let m = load_manifest(&common.config)?;
            let store = store_path(&common, &m);
            let r = cmd_generate(&m, &store)?;
            println!(
                "{} new records ({} converged, {} failed), {} already present",
                r.new_records, r.converged, r.failed, r.skipped
            );
            for (id, seed, msg) in &r.io_errors {
                println!("checkpoint not written for {id} seed {seed}: {msg}");
            }
        }
        Command::Measure { common } => {
            let m = load_manifest(&common.config)?;
            let store = store_path(&common, &m);
            let r = cmd_measure(&m, &store)?;
            println!("measured {} records, skipped {}", r.processed, r.skipped.len());
            for (id, seed, msg) in &r.skipped {
                println!("skipped {id} seed {seed}: {msg}");
            }
            for (name, n) in &r.undefined {
                println!("{name}: undefined for {n} records");
            }
            if r.searches_at_bound > 0 {
                println!("{} flatness searches ended at a bracket limit", r.searches_at_bound);
            }
        }
        Command::Evaluate {
            common,
            axes,
            n_eff_min,
            no_noise_filter,
            weak,
            subset,
            out,
        } => {
            let m = load_manifest(&common.config)?;
            let store = store_path(&common, &m);
            let axes = axes
                .iter()
                .map(|a| a.parse::<Axis>().map_err(|e| PipelineError::Config(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            let args = EvaluateArgs {
                axes,
                n_eff_min,
                no_noise_filter,
                weak,
                subset,
            };
            let r = cmd_evaluate(&m, &store, &args, &out)?;
            println!(
                "{} records ({} failed runs removed), {} environments, {} skipped",
                r.records, r.removed_failed, r.environments, r.skipped_environments
            );
            for f in &r.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Regress {
            common,
            family,
            subset,
            out,
        } => {
            let m = load_manifest(&common.config)?;
            let store = store_path(&common, &m);
            let kinds = if family == "all" {
                FamilyKind::ALL.to_vec()
            } else {
                vec![family.parse::<FamilyKind>().map_err(PipelineError::Config)?]
            };
            for f in cmd_regress(&m, &store, &kinds, &subset, &out)? {
                println!("wrote {}", f.display());
            }
        }
        Command::Report { out, config, inputs } => {
            let expected = config.as_deref().map(load_manifest).transpose()?.map(|m| m.hash());
            let (summary, regressions) = match inputs.split_first() {
                Some((first, rest)) => (first.clone(), rest.to_vec()),
                None => {
                    let regs = FamilyKind::ALL
                        .iter()
                        .map(|&k| out.join(regression_csv_name(k)))
                        .filter(|p| p.exists())
                        .collect();
                    (out.join(FAMILY_SUMMARY_CSV), regs)
                }
            };
            if !summary.exists() {
                return Err(PipelineError::EmptyData(format!("{} not found", summary.display())));
            }
            for f in cmd_report(&summary, &regressions, expected.as_deref(), &out)? {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
