//! Coupled-network sign-error evaluation: environments, Monte Carlo noise
//! weighting, robust and average sign-errors and family summaries.

mod env;
mod weights;

pub use env::{build_coupled_environments, build_weak_environments, Environment, EnvironmentSet, SkippedEnvironment};
pub use weights::{chi, effective_sample_size, kappa, kappa_threshold};

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;

use crate::measures::MeasureId;
use crate::stats::{mean, median, percentile_lower};
use crate::trainer::{Axis, AxisValue, ExperimentRecord};

/// Values of one measure per record, aligned with the record slice.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureColumn {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

impl MeasureColumn {
    pub fn new(name: impl Into<String>, values: Vec<Option<f64>>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }

    pub fn from_records(records: &[ExperimentRecord], id: MeasureId) -> Self {
        Self::new(id.name(), records.iter().map(|r| r.measure(id)).collect())
    }

    /// Same column under a pointwise transformation.
    pub fn map(&self, name: impl Into<String>, f: impl Fn(f64) -> f64) -> Self {
        Self::new(name, self.values.iter().map(|v| v.map(&f)).collect())
    }
}

/// One column per measure, in the canonical measure order.
pub fn measure_columns(records: &[ExperimentRecord]) -> Vec<MeasureColumn> {
    MeasureId::ALL
        .iter()
        .map(|&id| MeasureColumn::from_records(records, id))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SignErrorOptions {
    pub n_eff_min: f64,
    /// Weight pairs by `kappa`; otherwise every pair has weight one.
    pub noise_filter: bool,
}

impl Default for SignErrorOptions {
    fn default() -> Self {
        Self {
            n_eff_min: 12.0,
            noise_filter: true,
        }
    }
}

/// Sign-error of one measure in one environment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignErrorStat {
    pub env: usize,
    pub measure: String,
    /// `None` when the environment was discarded for low effective sample
    /// size.
    pub value: Option<f64>,
    pub n_eff: f64,
    pub n_pairs_used: usize,
    /// Pairs skipped because the measure is undefined for one of the runs.
    pub n_pairs_dropped: usize,
}

fn sign(a: f64, b: f64) -> i8 {
    match b.partial_cmp(&a) {
        Some(Ordering::Greater) => 1,
        Some(Ordering::Less) => -1,
        _ => 0,
    }
}

/// Weighted fraction of sample pairs whose measure change disagrees in sign
/// with the gap change; ties count one half.
pub fn empirical_sign_error(
    env: &Environment,
    gaps: &[f64],
    column: &MeasureColumn,
    opts: &SignErrorOptions,
) -> (Option<f64>, f64, usize, usize) {
    let mut weights = Vec::with_capacity(env.pairs.len());
    let mut losses = Vec::with_capacity(env.pairs.len());
    let mut dropped = 0;
    for &(i, j) in &env.pairs {
        let (Some(ci), Some(cj)) = (column.values[i], column.values[j]) else {
            dropped += 1;
            continue;
        };
        let w = if opts.noise_filter {
            kappa(gaps[i], gaps[j], env.m_test)
        } else {
            1.0
        };
        weights.push(w);
        losses.push((1 - sign(gaps[i], gaps[j]) * sign(ci, cj)) as f64);
    }
    let n_eff = effective_sample_size(&weights);
    let total: f64 = weights.iter().sum();
    let value = (n_eff >= opts.n_eff_min && total > 0.0).then(|| {
        let num: f64 = weights.iter().zip(&losses).map(|(w, l)| w * l).sum();
        num / (2.0 * total)
    });
    (value, n_eff, weights.len(), dropped)
}

/// Sign-errors of every column in every environment, ordered by environment
/// then column.
pub fn evaluate_environments(
    envs: &[Environment],
    gaps: &[f64],
    columns: &[MeasureColumn],
    opts: &SignErrorOptions,
) -> Vec<SignErrorStat> {
    envs.par_iter()
        .enumerate()
        .flat_map_iter(|(e, env)| {
            columns.iter().map(move |c| {
                let (value, n_eff, used, dropped) = empirical_sign_error(env, gaps, c, opts);
                SignErrorStat {
                    env: e,
                    measure: c.name.clone(),
                    value,
                    n_eff,
                    n_pairs_used: used,
                    n_pairs_dropped: dropped,
                }
            })
        })
        .collect()
}

/// Gaps aligned with the record slice.
pub fn gaps(records: &[ExperimentRecord]) -> Vec<f64> {
    records.iter().map(|r| r.gap).collect()
}

/// Worst case over retained environments; `None` when nothing was retained.
pub fn robust_sign_error(values: &[Option<f64>]) -> Option<f64> {
    values.iter().flatten().copied().reduce(f64::max)
}

/// Mean over retained environments.
pub fn average_sign_error(values: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    mean(&v)
}

/// A subset of environments.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Family {
    All,
    Axis(Axis),
    ValuePair(Axis, AxisValue, AxisValue),
}

impl Family {
    pub fn name(&self) -> String {
        match self {
            Family::All => "all".into(),
            Family::Axis(a) => a.name().into(),
            Family::ValuePair(a, x, y) => format!("{}:{x}->{y}", a.name()),
        }
    }

    pub fn contains(&self, env: &Environment) -> bool {
        match self {
            Family::All => true,
            Family::Axis(a) => env.axis == *a,
            Family::ValuePair(a, x, y) => env.axis == *a && env.value_pair == (x.clone(), y.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilySummary {
    pub family: String,
    pub measure: String,
    /// Environments in the family before the effective-sample-size filter.
    pub n_envs: usize,
    pub n_retained: usize,
    pub median: Option<f64>,
    pub mean: Option<f64>,
    pub p90: Option<f64>,
    pub max: Option<f64>,
}

impl FamilySummary {
    pub fn is_empty(&self) -> bool {
        self.n_retained == 0
    }
}

/// Median, mean, nearest-rank-lower 90th percentile and max of the
/// retained values.
pub fn summarize_values(family: &str, measure: &str, values: &[Option<f64>]) -> FamilySummary {
    let mut kept: Vec<f64> = values.iter().flatten().copied().collect();
    kept.sort_by(f64::total_cmp);
    FamilySummary {
        family: family.into(),
        measure: measure.into(),
        n_envs: values.len(),
        n_retained: kept.len(),
        median: median(&kept),
        mean: mean(&kept),
        p90: percentile_lower(&kept, 90.0),
        max: kept.last().copied(),
    }
}

pub fn summarize_family(
    family: &Family,
    envs: &[Environment],
    stats: &[SignErrorStat],
    measure: &str,
) -> FamilySummary {
    let values: Vec<Option<f64>> = stats
        .iter()
        .filter(|s| s.measure == measure && family.contains(&envs[s.env]))
        .map(|s| s.value)
        .collect();
    summarize_values(&family.name(), measure, &values)
}

/// `All`, each axis present, and each populated value pair, in that order.
pub fn standard_families(envs: &[Environment]) -> Vec<Family> {
    let axes: BTreeSet<Axis> = envs.iter().map(|e| e.axis).collect();
    let mut out = vec![Family::All];
    out.extend(axes.iter().map(|&a| Family::Axis(a)));
    let pairs: BTreeSet<(Axis, AxisValue, AxisValue)> = envs
        .iter()
        .map(|e| (e.axis, e.value_pair.0.clone(), e.value_pair.1.clone()))
        .collect();
    out.extend(pairs.into_iter().map(|(a, x, y)| Family::ValuePair(a, x, y)));
    out
}

/// Summaries of every family for every measure, family-major.
pub fn summarize_all(
    families: &[Family],
    envs: &[Environment],
    stats: &[SignErrorStat],
    measures: &[String],
) -> Vec<FamilySummary> {
    families
        .iter()
        .flat_map(|f| measures.iter().map(move |m| summarize_family(f, envs, stats, m)))
        .collect()
}

/// One cell of a per-value-pair breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BreakdownCell {
    pub from: AxisValue,
    pub to: AxisValue,
    pub summary: FamilySummary,
}

/// Summary for every ascending value pair of `axis`, including pairs with no
/// environment or no retained environment (no-data cells).
pub fn pairwise_value_breakdown(
    envs: &[Environment],
    stats: &[SignErrorStat],
    measure: &str,
    axis: Axis,
) -> Vec<BreakdownCell> {
    let values: BTreeSet<AxisValue> = envs
        .iter()
        .filter(|e| e.axis == axis)
        .flat_map(|e| [e.value_pair.0.clone(), e.value_pair.1.clone()])
        .collect();
    let values: Vec<AxisValue> = values.into_iter().collect();
    let mut out = Vec::new();
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            let fam = Family::ValuePair(axis, a.clone(), b.clone());
            out.push(BreakdownCell {
                from: a.clone(),
                to: b.clone(),
                summary: summarize_family(&fam, envs, stats, measure),
            });
        }
    }
    out
}
