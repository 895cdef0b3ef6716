//! The 24 generalization measures computed from a trained network, its
//! initialization and its training set.
//!
//! Every measure carries the `sqrt(C / m)` train-size normalization. Values
//! that cannot be formed (non-positive margin, zero norm inside a log, failed
//! flatness search) are `None` rather than NaN.

mod id;
mod margin;
mod sigma;

pub use id::{MeasureId, MeasureVector};
pub use margin::{margin_percentile, margins};
pub use sigma::{
    sigma_search, sigma_search_fn, PerturbedLoss, SearchLoss, SigmaBound, SigmaSearchOptions,
    SigmaSearchResult,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{spectral_norm, Layer, LayerSpec, Network, NnError, PerturbMode};
use crate::seed::derive_seed;
use crate::trainer::Dataset;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("unknown measure `{0}`")]
    UnknownMeasure(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("unperturbed loss {loss} is not below the target {target}")]
    SearchInfeasible { loss: f64, target: f64 },
    #[error("invalid measure context: {0}")]
    Context(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Which log term enters `pacbayes.init`: `log(m / sigma)` as the formula is
/// printed, or `log(m / delta)` like the other PAC-Bayes measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitLogTerm {
    #[default]
    Sigma,
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasureOptions {
    pub delta: f64,
    pub epsilon: f64,
    /// Percentile of the training margins used as gamma.
    pub margin_percentile: f64,
    pub pacbayes_init_log: InitLogTerm,
    pub sigma_search: SigmaSearchOptions,
}

impl Default for MeasureOptions {
    fn default() -> Self {
        Self {
            delta: 0.1,
            epsilon: 1e-3,
            margin_percentile: 10.0,
            pacbayes_init_log: InitLogTerm::Sigma,
            sigma_search: SigmaSearchOptions::default(),
        }
    }
}

/// Norms of one layer's weight tensor and of its distance from init.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerNorms {
    /// `None` when power iteration did not converge.
    pub spec: Option<f64>,
    pub fro_sq: f64,
    pub dist_spec: Option<f64>,
    pub dist_fro_sq: f64,
}

impl LayerNorms {
    pub fn of(layer: &Layer, init: &Layer) -> Result<Self, MeasureError> {
        let diff = layer.weight.sub(&init.weight)?;
        let diff_layer = Layer::new(
            LayerSpec {
                has_bias: false,
                ..layer.spec
            },
            diff,
            None,
        )?;
        Ok(Self {
            spec: spectral(layer),
            fro_sq: layer.weight.frobenius_norm_sq(),
            dist_spec: spectral(&diff_layer),
            dist_fro_sq: diff_layer.weight.frobenius_norm_sq(),
        })
    }
}

fn spectral(layer: &Layer) -> Option<f64> {
    match spectral_norm(layer) {
        Ok(s) => Some(s),
        Err(e) => {
            log::warn!("spectral norm unavailable: {e}");
            None
        }
    }
}

/// Everything the measure formulas read.
#[derive(Debug, Clone)]
pub struct MeasureContext {
    pub m: usize,
    pub num_params: usize,
    pub gamma: f64,
    pub sigma: Option<f64>,
    pub sigma_mag: Option<f64>,
    pub delta: f64,
    pub epsilon: f64,
    pub init_log: InitLogTerm,
    pub layers: Vec<LayerNorms>,
    /// Summed outputs of the squared-weight network on the all-ones input.
    pub path_sum: f64,
    pub w: Vec<f64>,
    pub w0: Vec<f64>,
}

/// Searches that fed a context, kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub gamma: f64,
    pub sigma: Option<SigmaSearchResult>,
    pub sigma_mag: Option<SigmaSearchResult>,
}

impl MeasureContext {
    /// Context with externally supplied gamma and flatness scales.
    pub fn new(
        net: &Network,
        m: usize,
        gamma: f64,
        sigma: Option<f64>,
        sigma_mag: Option<f64>,
        opts: &MeasureOptions,
    ) -> Result<Self, MeasureError> {
        if m == 0 {
            return Err(MeasureError::EmptyTrainSet);
        }
        let layers = net
            .layers()
            .iter()
            .zip(net.init_layers())
            .map(|(l, l0)| LayerNorms::of(l, l0))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            m,
            num_params: net.count_params(),
            gamma,
            sigma,
            sigma_mag,
            delta: opts.delta,
            epsilon: opts.epsilon,
            init_log: opts.pacbayes_init_log,
            layers,
            path_sum: net.forward_squared_ones().iter().sum(),
            w: net.flat_params(),
            w0: net.flat_init_params(),
        })
    }

    /// Computes gamma and both sigma searches from the training set. The
    /// search streams derive from `run_key` and the measure name, so results
    /// do not depend on evaluation order.
    pub fn from_training(
        net: &Network,
        train: &Dataset,
        opts: &MeasureOptions,
        run_key: &str,
    ) -> Result<(Self, SearchReport), MeasureError> {
        let gamma = margin_percentile(net, train, opts.margin_percentile)?;
        let search = |mode: PerturbMode, id: MeasureId| {
            let seed = derive_seed(&["sigma", run_key, id.name()]);
            match sigma_search(net, train, mode, opts.epsilon, &opts.sigma_search, seed) {
                Ok(r) => {
                    if r.bound != SigmaBound::Interior {
                        log::info!("{run_key}: {} search ended at {:?}", id.name(), r.bound);
                    }
                    Ok(Some(r))
                }
                Err(MeasureError::SearchInfeasible { loss, target }) => {
                    log::warn!("{run_key}: {} search infeasible ({loss} >= {target})", id.name());
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        };
        let sigma = search(PerturbMode::Isotropic, MeasureId::PacbayesFlatness)?;
        let sigma_mag = search(PerturbMode::MagnitudeAware, MeasureId::PacbayesMagFlatness)?;
        let ctx = Self::new(
            net,
            train.len(),
            gamma,
            sigma.as_ref().map(|r| r.sigma),
            sigma_mag.as_ref().map(|r| r.sigma),
            opts,
        )?;
        Ok((
            ctx,
            SearchReport {
                gamma,
                sigma,
                sigma_mag,
            },
        ))
    }

    fn m(&self) -> f64 {
        self.m as f64
    }

    fn d(&self) -> f64 {
        self.layers.len() as f64
    }

    fn gamma_sq(&self) -> Option<f64> {
        (self.gamma > 0.0).then(|| self.gamma * self.gamma)
    }

    /// `sum_i log ||W_i||_2^2`, if every spectral norm is known and positive.
    fn log_prod_spec_sq(&self) -> Option<f64> {
        self.layers
            .iter()
            .map(|l| l.spec.filter(|&s| s > 0.0).map(|s| 2.0 * s.ln()))
            .sum()
    }

    fn log_prod_fro_sq(&self) -> Option<f64> {
        self.layers
            .iter()
            .map(|l| (l.fro_sq > 0.0).then(|| l.fro_sq.ln()))
            .sum()
    }

    fn spec_sq(&self) -> Option<Vec<f64>> {
        self.layers
            .iter()
            .map(|l| l.spec.filter(|&s| s > 0.0).map(|s| s * s))
            .collect()
    }
}

fn finite(v: Option<f64>) -> Option<f64> {
    v.filter(|x| x.is_finite())
}

/// `sqrt(x / m)` for a nonnegative numerator.
fn root_over_m(x: f64, m: f64) -> Option<f64> {
    finite((x >= 0.0).then(|| (x / m).sqrt()))
}

/// `log sqrt(exp(log_num) / den)` computed in log space.
fn half_log_ratio(log_num: Option<f64>, den: Option<f64>) -> Option<f64> {
    let den = den.filter(|&d| d > 0.0)?;
    finite(Some(0.5 * (log_num? - den.ln())))
}

pub type MeasureValues = Vec<(MeasureId, Option<f64>)>;

/// `params` and `inverse.margin`.
pub fn compute_vc_output(ctx: &MeasureContext) -> MeasureValues {
    let m = ctx.m();
    vec![
        (MeasureId::Params, root_over_m(ctx.num_params as f64, m)),
        (
            MeasureId::InverseMargin,
            finite(ctx.gamma_sq().map(|g2| 1.0 / (g2 * m).sqrt())),
        ),
    ]
}

/// The seven spectral measures.
pub fn compute_spectral(ctx: &MeasureContext) -> MeasureValues {
    let m = ctx.m();
    let d = ctx.d();
    let g2m = ctx.gamma_sq().map(|g2| g2 * m);
    let lps = ctx.log_prod_spec_sq();
    let spec_sq = ctx.spec_sq();
    let ratio_sum = |num: &dyn Fn(&LayerNorms) -> f64| -> Option<f64> {
        spec_sq.as_ref().map(|s2| {
            ctx.layers
                .iter()
                .zip(s2)
                .map(|(l, s)| num(l) / s)
                .sum::<f64>()
        })
    };
    let dist_ratio = ratio_sum(&|l| l.dist_fro_sq);
    let fro_ratio = ratio_sum(&|l| l.fro_sq);
    let with_log = |a: Option<f64>, b: Option<f64>| -> Option<f64> {
        Some(a? + b.filter(|&v| v > 0.0)?.ln())
    };
    let log_sum_num = |extra: Option<f64>| -> Option<f64> {
        // log of d * (prod / extra)^(1/d)
        Some(d.ln() + (lps? - extra?.ln()) / d)
    };
    vec![
        (MeasureId::LogSpecInitMain, half_log_ratio(with_log(lps, dist_ratio), g2m)),
        (MeasureId::LogSpecOrigMain, half_log_ratio(with_log(lps, fro_ratio), g2m)),
        (MeasureId::LogProdOfSpecOverMargin, half_log_ratio(lps, g2m)),
        (MeasureId::LogProdOfSpec, half_log_ratio(lps, Some(m))),
        (MeasureId::FroOverSpec, fro_ratio.and_then(|r| root_over_m(r, m))),
        (
            MeasureId::LogSumOfSpecOverMargin,
            half_log_ratio(log_sum_num(ctx.gamma_sq()), Some(m)),
        ),
        (MeasureId::LogSumOfSpec, half_log_ratio(log_sum_num(Some(1.0)), Some(m))),
    ]
}

/// The seven Frobenius measures.
pub fn compute_frobenius(ctx: &MeasureContext) -> MeasureValues {
    let m = ctx.m();
    let d = ctx.d();
    let g2m = ctx.gamma_sq().map(|g2| g2 * m);
    let lpf = ctx.log_prod_fro_sq();
    let log_sum_num = |inv_g2: Option<f64>| -> Option<f64> {
        Some(d.ln() + (lpf? + inv_g2?.ln()) / d)
    };
    let sum = |f: fn(&LayerNorms) -> f64| ctx.layers.iter().map(f).sum::<f64>();
    let dist_spec_sq: Option<f64> = ctx
        .layers
        .iter()
        .map(|l| l.dist_spec.map(|s| s * s))
        .sum();
    vec![
        (MeasureId::LogProdOfFroOverMargin, half_log_ratio(lpf, g2m)),
        (MeasureId::LogProdOfFro, half_log_ratio(lpf, Some(m))),
        (
            MeasureId::LogSumOfFroOverMargin,
            half_log_ratio(log_sum_num(ctx.gamma_sq().map(|g2| 1.0 / g2)), Some(m)),
        ),
        (MeasureId::LogSumOfFro, half_log_ratio(log_sum_num(Some(1.0)), Some(m))),
        (MeasureId::FroDist, root_over_m(sum(|l| l.dist_fro_sq), m)),
        (MeasureId::DistSpecInit, dist_spec_sq.and_then(|s| root_over_m(s, m))),
        (MeasureId::ParamNorm, root_over_m(sum(|l| l.fro_sq), m)),
    ]
}

/// `path.norm` and `path.norm.over.margin`.
pub fn compute_path(ctx: &MeasureContext) -> MeasureValues {
    let m = ctx.m();
    vec![
        (
            MeasureId::PathNormOverMargin,
            ctx.gamma_sq().and_then(|g2| root_over_m(ctx.path_sum / g2, m)),
        ),
        (MeasureId::PathNorm, root_over_m(ctx.path_sum, m)),
    ]
}

/// The six flatness measures.
pub fn compute_pacbayes(ctx: &MeasureContext) -> MeasureValues {
    let m = ctx.m();
    let eps2 = ctx.epsilon * ctx.epsilon;
    let omega = ctx.num_params as f64;
    let dist_sq: f64 = ctx.w.iter().zip(&ctx.w0).map(|(a, b)| (a - b) * (a - b)).sum();
    let w_sq: f64 = ctx.w.iter().map(|a| a * a).sum();
    let log_m_delta = (m / ctx.delta).ln();
    let sigma = ctx.sigma.filter(|&s| s > 0.0);
    let sigma_mag = ctx.sigma_mag.filter(|&s| s > 0.0);

    let init = sigma.and_then(|s| {
        let log_term = match ctx.init_log {
            InitLogTerm::Sigma => (m / s).ln(),
            InitLogTerm::Delta => log_m_delta,
        };
        root_over_m(dist_sq / (4.0 * s * s) + log_term + 10.0, m)
    });
    let orig = sigma.and_then(|s| root_over_m(w_sq / (4.0 * s * s) + log_m_delta + 10.0, m));
    let flatness = sigma.and_then(|s| finite(Some((1.0 / (s * s * m)).sqrt())));

    let mag = |norm_sq: f64| -> Option<f64> {
        let s2 = sigma_mag? * sigma_mag?;
        let num = eps2 + (s2 + 1.0) * norm_sq / omega;
        let sum: f64 = ctx
            .w
            .iter()
            .zip(&ctx.w0)
            .map(|(a, b)| (num / (eps2 + s2 * (a - b) * (a - b))).ln())
            .sum();
        root_over_m(0.25 * sum + log_m_delta + 10.0, m)
    };
    let mag_flatness = sigma_mag.and_then(|s| finite(Some((1.0 / (s * s * m)).sqrt())));

    vec![
        (MeasureId::PacbayesInit, init),
        (MeasureId::PacbayesOrig, orig),
        (MeasureId::PacbayesFlatness, flatness),
        (MeasureId::PacbayesMagInit, mag(dist_sq)),
        (MeasureId::PacbayesMagOrig, mag(w_sq)),
        (MeasureId::PacbayesMagFlatness, mag_flatness),
    ]
}

/// All 24 measures; every key present, undefined values as `None`.
pub fn compute_all(ctx: &MeasureContext) -> MeasureVector {
    let mut out: MeasureVector = MeasureId::ALL.iter().map(|&id| (id, None)).collect();
    for (id, v) in compute_vc_output(ctx)
        .into_iter()
        .chain(compute_spectral(ctx))
        .chain(compute_frobenius(ctx))
        .chain(compute_path(ctx))
        .chain(compute_pacbayes(ctx))
    {
        out.insert(id, finite(v));
    }
    out
}

/// Builds the context from the training set and computes every measure.
pub fn measure_network(
    net: &Network,
    train: &Dataset,
    opts: &MeasureOptions,
    run_key: &str,
) -> Result<(MeasureVector, SearchReport), MeasureError> {
    let (ctx, report) = MeasureContext::from_training(net, train, opts, run_key)?;
    Ok((compute_all(&ctx), report))
}
