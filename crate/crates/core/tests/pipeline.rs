use std::fs;
use std::path::{Path, PathBuf};

use robustgen_core::pipeline::{
    cmd_evaluate, cmd_generate, cmd_measure, cmd_regress, cmd_report, read_csv, render_markdown, render_svg,
    EvaluateArgs, PipelineError, ReportInputs, RunManifest, SignErrorRow, SummaryRow, FAMILY_SUMMARY_CSV,
    SIGN_ERRORS_CSV,
};
use robustgen_core::robust_regress::FamilyKind;
use robustgen_core::trainer::{Axis, RecordStore};
use tempfile::TempDir;

const SMALL: &str = r#"
master_seed = 7
seeds = [0, 1, 2]

[grid]
learning_rate = [0.05]
depth = [2, 3]
width = [8]
dataset = ["blobs"]
train_size = [32, 64]

[[datasets]]
id = "blobs"
input_dim = 4
num_classes = 2
generator_seed = 3
test_size = 200
kind = { type = "gaussian_blobs", separation = 4.0 }

[train]
max_epochs = 300

[measures.sigma_search]
mc_samples = 2
"#;

struct Run {
    _dir: TempDir,
    root: PathBuf,
    manifest: RunManifest,
    store: PathBuf,
}

fn generated() -> Run {
    let dir = TempDir::new().unwrap();
    let root = dir.path().to_path_buf();
    fs::write(root.join("run.toml"), SMALL).unwrap();
    let manifest = RunManifest::load(&root.join("run.toml")).unwrap();
    let store = manifest.store.clone();
    cmd_generate(&manifest, &store).unwrap();
    Run {
        _dir: dir,
        root,
        manifest,
        store,
    }
}

fn measured() -> Run {
    let run = generated();
    cmd_measure(&run.manifest, &run.store).unwrap();
    run
}

fn eval_args() -> EvaluateArgs {
    EvaluateArgs {
        n_eff_min: Some(0.0),
        no_noise_filter: true,
        ..Default::default()
    }
}

fn summary(family: &str, measure: &str, retained: usize, mean: Option<f64>) -> SummaryRow {
    SummaryRow {
        manifest_hash: "h".into(),
        family: family.into(),
        measure: measure.into(),
        n_envs: 2,
        n_retained: retained,
        median: mean,
        mean,
        p90: mean,
        max: mean.map(|m| (m + 0.1).min(1.0)),
    }
}

#[test]
fn manifest_defaults_and_store_resolution() {
    let run = generated();
    assert_eq!(run.store, run.root.join("store/records.jsonl"));
    assert!(run.manifest.bias);
    assert_eq!(run.manifest.evaluation.n_eff_min, 12.0);
    assert!(run.manifest.evaluation.noise_filter);
}

#[test]
fn manifest_hash_tracks_content_not_location() {
    let a = RunManifest::from_toml(SMALL).unwrap();
    let mut b = a.clone();
    b.store = PathBuf::from("/elsewhere/records.jsonl");
    assert_eq!(a.hash(), b.hash());
    b.master_seed += 1;
    assert_ne!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 64);
}

#[test]
fn manifest_errors_are_configuration_errors() {
    for text in [
        "seeds = [",
        &SMALL.replace("seeds = [0, 1, 2]", "seeds = []"),
        &SMALL.replace("dataset = [\"blobs\"]", "dataset = [\"other\"]"),
        &SMALL.replace("learning_rate = [0.05]", "learning_rate = [-1.0]"),
    ] {
        let err = RunManifest::from_toml(text).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }
}

#[test]
fn measure_is_idempotent() {
    let run = generated();
    let first = cmd_measure(&run.manifest, &run.store).unwrap();
    assert_eq!(first.processed, 12);
    let bytes = fs::read(&run.store).unwrap();
    cmd_measure(&run.manifest, &run.store).unwrap();
    assert_eq!(fs::read(&run.store).unwrap(), bytes);
    let records = RecordStore::new(&run.store).load().unwrap();
    assert!(records.iter().all(|r| r.measures.len() == 24));
}

#[test]
fn missing_checkpoint_skips_only_that_record() {
    let run = generated();
    let records = RecordStore::new(&run.store).load().unwrap();
    let victim = &records[3];
    fs::remove_file(run.root.join("store").join(victim.checkpoint.as_ref().unwrap())).unwrap();
    let report = cmd_measure(&run.manifest, &run.store).unwrap();
    assert_eq!(report.processed, 11);
    assert_eq!(report.skipped.len(), 1);
    assert_eq!(report.skipped[0].0, victim.config.id());
    assert_eq!(report.skipped[0].1, victim.seed);
    let after = RecordStore::new(&run.store).load().unwrap();
    assert!(after[3].measures.is_empty());
    assert!(!after[2].measures.is_empty());
}

#[test]
fn empty_store_is_empty_data() {
    let dir = TempDir::new().unwrap();
    let m = RunManifest::from_toml(SMALL).unwrap();
    let store = dir.path().join("none.jsonl");
    assert_eq!(cmd_measure(&m, &store).unwrap_err().exit_code(), 3);
    let err = cmd_evaluate(&m, &store, &eval_args(), dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let err = cmd_regress(&m, &store, &[FamilyKind::PerConfig], &[], dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn evaluate_writes_hashed_rows_for_every_environment_and_measure() {
    let run = measured();
    let out = run.root.join("out");
    let report = cmd_evaluate(&run.manifest, &run.store, &eval_args(), &out).unwrap();
    // depth: one pair per train size; train_size: one pair per depth.
    assert_eq!(report.environments, 4);
    let rows: Vec<SignErrorRow> = read_csv(&out.join(SIGN_ERRORS_CSV)).unwrap();
    assert_eq!(rows.len(), 4 * 24);
    let hash = run.manifest.hash();
    assert!(rows.iter().all(|r| r.manifest_hash == hash && !r.weak));
    for r in &rows {
        assert_eq!(r.n_pairs_used + r.n_pairs_dropped, 9);
        assert!(r.value.is_none_or(|v| (0.0..=1.0).contains(&v)));
    }
    let params: Vec<_> = rows.iter().filter(|r| r.measure == "params" && r.axis == "depth").collect();
    // Deeper networks have more parameters, so the sign agrees whenever the
    // gap grows with depth.
    assert_eq!(params.len(), 2);

    let summaries: Vec<SummaryRow> = read_csv(&out.join(FAMILY_SUMMARY_CSV)).unwrap();
    let all: Vec<_> = summaries.iter().filter(|r| r.family == "all").collect();
    assert_eq!(all.len(), 24);
    assert!(all.iter().all(|r| r.n_envs == 4));
    assert!(summaries.iter().any(|r| r.family == "depth:2->3"));
}

#[test]
fn evaluate_axes_and_weak_flags() {
    let run = measured();
    let out = run.root.join("out");
    let args = EvaluateArgs {
        axes: vec![Axis::TrainSize],
        weak: true,
        ..eval_args()
    };
    let report = cmd_evaluate(&run.manifest, &run.store, &args, &out).unwrap();
    assert_eq!(report.environments, 1);
    let rows: Vec<SignErrorRow> = read_csv(&out.join(SIGN_ERRORS_CSV)).unwrap();
    assert!(rows.iter().all(|r| r.weak && r.axis == "train_size"));
    assert!(rows.iter().all(|r| r.n_pairs_used + r.n_pairs_dropped == 18));

    let args = EvaluateArgs {
        subset: vec!["nothing".into()],
        ..eval_args()
    };
    assert_eq!(cmd_evaluate(&run.manifest, &run.store, &args, &out).unwrap_err().exit_code(), 3);
}

#[test]
fn regress_writes_one_file_per_kind_with_baseline() {
    let run = measured();
    let out = run.root.join("out");
    let files = cmd_regress(&run.manifest, &run.store, &FamilyKind::ALL, &[], &out).unwrap();
    assert_eq!(files.len(), 3);
    for f in &files {
        let rows: Vec<robustgen_core::pipeline::RegressionCsvRow> = read_csv(f).unwrap();
        let baseline = rows.last().unwrap();
        assert_eq!(baseline.measure, "baseline");
        for r in &rows {
            assert_eq!(r.manifest_hash, run.manifest.hash());
            assert!(r.robust_rmse <= r.baseline_robust_rmse * (1.0 + 1e-9) + 1e-15);
            assert!(r.a >= 0.0);
        }
    }
}

#[test]
fn report_checks_hashes_and_is_deterministic() {
    let run = measured();
    let out = run.root.join("out");
    cmd_evaluate(&run.manifest, &run.store, &eval_args(), &out).unwrap();
    let regs = cmd_regress(&run.manifest, &run.store, &[FamilyKind::PerConfig], &[], &out).unwrap();
    let summary = out.join(FAMILY_SUMMARY_CSV);
    let hash = run.manifest.hash();

    let files = cmd_report(&summary, &regs, Some(&hash), &out).unwrap();
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).unwrap()).collect();
    cmd_report(&summary, &regs, Some(&hash), &out).unwrap();
    let second: Vec<Vec<u8>> = files.iter().map(|f| fs::read(f).unwrap()).collect();
    assert_eq!(first, second);

    let err = cmd_report(&summary, &regs, Some("deadbeef"), &out).unwrap_err();
    assert!(matches!(err, PipelineError::Malformed(_)));

    let mut other = run.manifest.clone();
    other.master_seed = 99;
    let other_out = run.root.join("other");
    let other_regs = cmd_regress(&other, &run.store, &[FamilyKind::PerConfig], &[], &other_out).unwrap();
    let err = cmd_report(&summary, &other_regs, None, &out).unwrap_err();
    assert_eq!(err.exit_code(), 4);
}

fn write_summaries(dir: &Path, rows: &[SummaryRow]) -> PathBuf {
    let p = dir.join(FAMILY_SUMMARY_CSV);
    let mut w = csv::Writer::from_path(&p).unwrap();
    rows.iter().for_each(|r| w.serialize(r).unwrap());
    w.flush().unwrap();
    p
}

#[test]
fn header_only_summary_is_empty_data() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join(FAMILY_SUMMARY_CSV);
    fs::write(&p, "manifest_hash,family,measure,n_envs,n_retained,median,mean,p90,max\n").unwrap();
    assert_eq!(cmd_report(&p, &[], None, dir.path()).unwrap_err().exit_code(), 3);
}

#[test]
fn report_orders_measures_and_marks_empty_families() {
    let rows = vec![
        summary("all", "b.measure", 2, Some(0.4)),
        summary("all", "a.measure", 2, Some(0.95)),
        summary("all", "c.measure", 0, None),
        summary("depth", "b.measure", 2, Some(0.3)),
        summary("depth", "a.measure", 0, None),
        summary("depth", "c.measure", 0, None),
        summary("depth:2->3", "b.measure", 1, Some(0.3)),
        summary("depth:2->3", "a.measure", 1, Some(1.0)),
        summary("depth:2->3", "c.measure", 0, None),
    ];
    let inputs = ReportInputs {
        manifest_hash: "h".into(),
        summaries: rows.clone(),
        regressions: vec![],
    };
    assert_eq!(inputs.measure_order(), ["b.measure", "a.measure", "c.measure"]);

    let svg = render_svg(&inputs);
    assert!(svg.starts_with("<svg"));
    assert!(svg.trim_end().ends_with("</svg>"));
    // c.measure in three families plus a.measure under depth.
    assert_eq!(svg.matches(r##"stroke="#e00000""##).count(), 4);
    assert_eq!(svg.matches(r##"stroke="#ff8c00""##).count(), 5);
    let b = svg.find(">b.measure<").unwrap();
    let a = svg.find(">a.measure<").unwrap();
    assert!(b < a);

    let md = render_markdown(&inputs);
    assert!(md.contains("robust sign-error 1.0 in the `all` family: a.measure."), "{md}");

    let dir = TempDir::new().unwrap();
    let p = write_summaries(dir.path(), &rows);
    cmd_report(&p, &[], Some("h"), dir.path()).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("report.svg")).unwrap(), svg);
}
