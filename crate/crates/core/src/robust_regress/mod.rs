//! Robust (worst-environment) regression of the generalization gap on a
//! measure: `min_{a >= 0, b} max_e mean_e((a C + b - G)^2)`.
//!
//! Each environment's mean squared error is a convex quadratic in `(a, b)`
//! with unit curvature in `b`, so `g(a) = min_b max_e MSE_e(a, b)` is convex
//! and both levels are solved by golden-section search. The inner optimum is
//! then polished exactly: the minimum of a maximum of equal-curvature
//! parabolas is either one parabola's vertex or the crossing of two.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::robust_eval::MeasureColumn;
use crate::trainer::{Axis, AxisValue, ExperimentRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// One environment per configuration; seeds vary.
    PerConfig,
    /// One environment per slice in which a single axis varies.
    SingleAxisVaries,
    /// One environment per value of a single fixed axis.
    AllButOneFixed,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 3] = [
        FamilyKind::PerConfig,
        FamilyKind::SingleAxisVaries,
        FamilyKind::AllButOneFixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FamilyKind::PerConfig => "per_config",
            FamilyKind::SingleAxisVaries => "single_axis_varies",
            FamilyKind::AllButOneFixed => "all_but_one_fixed",
        }
    }
}

impl fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FamilyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FamilyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown regression family `{s}`"))
    }
}

/// A set of records forming one regression environment.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionEnv {
    pub id: String,
    /// Indices into the record slice.
    pub records: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionFamily {
    pub kind: FamilyKind,
    pub environments: Vec<RegressionEnv>,
}

/// Axes taking at least two values among the records.
fn varying_axes(records: &[ExperimentRecord]) -> Vec<Axis> {
    Axis::ALL
        .into_iter()
        .filter(|&a| {
            let mut vals = records.iter().map(|r| r.config.value(a));
            match vals.next() {
                Some(first) => vals.any(|v| v != first),
                None => false,
            }
        })
        .collect()
}

pub fn build_regression_environments(records: &[ExperimentRecord], kind: FamilyKind) -> RegressionFamily {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    match kind {
        FamilyKind::PerConfig => {
            for (i, r) in records.iter().enumerate() {
                groups.entry(r.config.id()).or_default().push(i);
            }
        }
        FamilyKind::SingleAxisVaries => {
            for axis in varying_axes(records) {
                for (i, r) in records.iter().enumerate() {
                    let id = format!("{} varies|{}", axis.name(), r.config.id_without(axis));
                    groups.entry(id).or_default().push(i);
                }
            }
        }
        FamilyKind::AllButOneFixed => {
            for axis in varying_axes(records) {
                let mut by_value: BTreeMap<AxisValue, Vec<usize>> = BTreeMap::new();
                for (i, r) in records.iter().enumerate() {
                    by_value.entry(r.config.value(axis)).or_default().push(i);
                }
                for (v, idx) in by_value {
                    groups.insert(format!("{}={v} fixed", axis.name()), idx);
                }
            }
        }
    }
    RegressionFamily {
        kind,
        environments: groups
            .into_iter()
            .map(|(id, records)| RegressionEnv { id, records })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub a: f64,
    pub b: f64,
}

/// `mean((a C + b - G)^2)` over the points.
pub fn env_mse(points: &[(f64, f64)], params: AffineParams) -> f64 {
    points
        .iter()
        .map(|&(c, g)| {
            let r = params.a * c + params.b - g;
            r * r
        })
        .sum::<f64>()
        / points.len() as f64
}

/// Centred second moments of one environment.
#[derive(Debug, Clone, Copy)]
struct Moments {
    mean_c: f64,
    mean_g: f64,
    var_c: f64,
    var_g: f64,
    cov: f64,
}

impl Moments {
    fn of(points: &[(f64, f64)]) -> Self {
        let n = points.len() as f64;
        let mean_c = points.iter().map(|p| p.0).sum::<f64>() / n;
        let mean_g = points.iter().map(|p| p.1).sum::<f64>() / n;
        let (mut var_c, mut var_g, mut cov) = (0.0, 0.0, 0.0);
        for &(c, g) in points {
            let (dc, dg) = (c - mean_c, g - mean_g);
            var_c += dc * dc;
            var_g += dg * dg;
            cov += dc * dg;
        }
        Self {
            mean_c,
            mean_g,
            var_c: var_c / n,
            var_g: var_g / n,
            cov: cov / n,
        }
    }

    /// Vertex `p` and floor `r` of the parabola `b -> (b - p)^2 + r` at slope `a`.
    fn parabola(&self, a: f64) -> (f64, f64) {
        let p = self.mean_g - a * self.mean_c;
        let r = (a * a * self.var_c - 2.0 * a * self.cov + self.var_g).max(0.0);
        (p, r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Relative tolerance of the golden-section searches.
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-12,
        }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimizer of a convex function on `[lo, hi]` by golden-section search.
fn golden(f: &mut impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, opts: &SolverOptions) -> f64 {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..opts.max_iter {
        if hi - lo <= opts.tol * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

fn max_parabola(parabolas: &[(f64, f64)], b: f64) -> f64 {
    parabolas
        .iter()
        .map(|&(p, r)| (b - p) * (b - p) + r)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `min_b max_e (b - p_e)^2 + r_e`, returned as `(b, value)`.
fn inner_min(parabolas: &[(f64, f64)], opts: &SolverOptions) -> (f64, f64) {
    let lo = parabolas.iter().map(|q| q.0).fold(f64::INFINITY, f64::min);
    let hi = parabolas.iter().map(|q| q.0).fold(f64::NEG_INFINITY, f64::max);
    let mut f = |b: f64| max_parabola(parabolas, b);
    let b0 = if hi > lo { golden(&mut f, lo, hi, opts) } else { lo };
    let v0 = f(b0);

    // Exact polish over vertices and pairwise crossings of nearly active pieces.
    let slack = 1e-7 * (1.0 + v0.abs());
    let active: Vec<(f64, f64)> = parabolas
        .iter()
        .copied()
        .filter(|&(p, r)| (b0 - p) * (b0 - p) + r >= v0 - slack)
        .collect();
    let mut best = (b0, v0);
    let mut consider = |b: f64| {
        if b.is_finite() {
            let v = max_parabola(parabolas, b);
            if v < best.1 {
                best = (b, v);
            }
        }
    };
    for (i, &(pi, ri)) in active.iter().enumerate() {
        consider(pi);
        for &(pj, rj) in &active[i + 1..] {
            if pj != pi {
                consider(0.5 * (pi + pj) + (rj - ri) / (2.0 * (pj - pi)));
            }
        }
    }
    best
}

/// Result of a robust fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustFit {
    pub params: AffineParams,
    pub robust_mse: f64,
    /// The measure is constant over every point, so `a` is fixed at zero.
    pub degenerate: bool,
}

impl RobustFit {
    pub fn robust_rmse(&self) -> f64 {
        self.robust_mse.sqrt()
    }
}

fn check_envs(envs: &[Vec<(f64, f64)>]) -> Result<(), String> {
    if envs.is_empty() || envs.iter().any(Vec::is_empty) {
        return Err("robust regression needs at least one nonempty environment".into());
    }
    if envs.iter().flatten().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err("non-finite value in regression data".into());
    }
    Ok(())
}

fn robust_objective(envs: &[Vec<(f64, f64)>], params: AffineParams) -> f64 {
    envs.iter()
        .map(|e| env_mse(e, params))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Best bias-only predictor: `min_b max_e mean_e((b - G)^2)`.
pub fn fit_bias_baseline(envs: &[Vec<(f64, f64)>], opts: &SolverOptions) -> Result<RobustFit, String> {
    check_envs(envs)?;
    let moments: Vec<Moments> = envs.iter().map(|e| Moments::of(e)).collect();
    let parabolas: Vec<(f64, f64)> = moments.iter().map(|m| m.parabola(0.0)).collect();
    let (b, _) = inner_min(&parabolas, opts);
    let params = AffineParams { a: 0.0, b };
    Ok(RobustFit {
        params,
        robust_mse: robust_objective(envs, params),
        degenerate: false,
    })
}

/// Best affine predictor with `a >= 0` under the worst-environment MSE.
pub fn fit_affine(envs: &[Vec<(f64, f64)>], opts: &SolverOptions) -> Result<RobustFit, String> {
    check_envs(envs)?;
    let baseline = fit_bias_baseline(envs, opts)?;
    let (c_min, c_max) = envs
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.0), hi.max(p.0)));
    if c_max == c_min {
        return Ok(RobustFit {
            degenerate: true,
            ..baseline
        });
    }
    let moments: Vec<Moments> = envs.iter().map(|e| Moments::of(e)).collect();
    let mut parabolas = vec![(0.0, 0.0); moments.len()];
    let mut g = |a: f64| {
        for (q, m) in parabolas.iter_mut().zip(&moments) {
            *q = m.parabola(a);
        }
        inner_min(&parabolas, opts)
    };

    // Bracket the minimizer of the convex marginal g(a) on [0, 2A].
    let (g_min, g_max) = envs
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let mut upper = ((g_max - g_min).max(1e-12)) / (c_max - c_min);
    let mut g_upper = g(upper).1;
    for _ in 0..opts.max_iter {
        let next = g(2.0 * upper).1;
        if next > g_upper {
            break;
        }
        upper *= 2.0;
        g_upper = next;
    }
    let a = golden(&mut |a| g(a).1, 0.0, 2.0 * upper, opts);
    let (b, _) = g(a);
    let params = AffineParams { a, b };
    let value = robust_objective(envs, params);
    if value <= baseline.robust_mse {
        Ok(RobustFit {
            params,
            robust_mse: value,
            degenerate: false,
        })
    } else {
        Ok(baseline)
    }
}

/// One row of a regression report. The baseline row has measure `baseline`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub measure: String,
    pub a: f64,
    pub b: f64,
    pub robust_rmse: f64,
    pub mean_rmse: f64,
    pub baseline_robust_rmse: f64,
    pub family_kind: FamilyKind,
    pub n_envs: usize,
    /// Environments dropped because the measure was undefined somewhere in them.
    pub n_envs_dropped: usize,
    pub degenerate: bool,
}

/// `(C, G)` points per environment, dropping environments in which the
/// measure is undefined for any record.
pub fn environment_points(
    family: &RegressionFamily,
    gaps: &[f64],
    column: &MeasureColumn,
) -> (Vec<Vec<(f64, f64)>>, usize) {
    let mut out = Vec::new();
    let mut dropped = 0;
    for env in &family.environments {
        let pts: Option<Vec<(f64, f64)>> = env
            .records
            .iter()
            .map(|&i| column.values[i].map(|c| (c, gaps[i])))
            .collect();
        match pts {
            Some(p) if !p.is_empty() => out.push(p),
            _ => dropped += 1,
        }
    }
    (out, dropped)
}

fn mean_rmse(envs: &[Vec<(f64, f64)>], params: AffineParams) -> f64 {
    envs.iter().map(|e| env_mse(e, params).sqrt()).sum::<f64>() / envs.len() as f64
}

/// Fits every column and the shared bias baseline. Columns with no usable
/// environment are left out; the baseline row comes last.
pub fn regression_report(
    family: &RegressionFamily,
    gaps: &[f64],
    columns: &[MeasureColumn],
    opts: &SolverOptions,
) -> Result<Vec<RegressionRow>, String> {
    let all: Vec<Vec<(f64, f64)>> = family
        .environments
        .iter()
        .filter(|e| !e.records.is_empty())
        .map(|e| e.records.iter().map(|&i| (0.0, gaps[i])).collect())
        .collect();
    let baseline = fit_bias_baseline(&all, opts)?;
    let base_rmse = baseline.robust_rmse();

    let rows: Vec<Option<RegressionRow>> = columns
        .par_iter()
        .map(|col| {
            let (envs, dropped) = environment_points(family, gaps, col);
            if envs.is_empty() {
                log::warn!("{}: no environment with defined values", col.name);
                return Ok(None);
            }
            let fit = fit_affine(&envs, opts)?;
            let base = fit_bias_baseline(&envs, opts)?;
            Ok(Some(RegressionRow {
                measure: col.name.clone(),
                a: fit.params.a,
                b: fit.params.b,
                robust_rmse: fit.robust_rmse(),
                mean_rmse: mean_rmse(&envs, fit.params),
                baseline_robust_rmse: base.robust_rmse(),
                family_kind: family.kind,
                n_envs: envs.len(),
                n_envs_dropped: dropped,
                degenerate: fit.degenerate,
            }))
        })
        .collect::<Result<_, String>>()?;

    let mut out: Vec<RegressionRow> = rows.into_iter().flatten().collect();
    out.push(RegressionRow {
        measure: "baseline".into(),
        a: 0.0,
        b: baseline.params.b,
        robust_rmse: base_rmse,
        mean_rmse: mean_rmse(&all, baseline.params),
        baseline_robust_rmse: base_rmse,
        family_kind: family.kind,
        n_envs: all.len(),
        n_envs_dropped: 0,
        degenerate: false,
    });
    Ok(out)
}
