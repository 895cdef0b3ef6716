//! Searches for the largest perturbation scale that keeps the expected
//! perturbed training loss at or below a target.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::nn::{perturb_flat, ForwardScratch, Network, PerturbMode};
use crate::trainer::{argmax, Dataset};

use super::MeasureError;

/// Loss estimated under perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SearchLoss {
    #[default]
    ClassificationError,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigmaSearchOptions {
    pub target: f64,
    pub mc_samples: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// First candidate; the search doubles or halves from here.
    pub sigma_start: f64,
    /// Relative width at which the binary search stops.
    pub tol: f64,
    pub loss: SearchLoss,
}

impl Default for SigmaSearchOptions {
    fn default() -> Self {
        Self {
            target: 0.1,
            mc_samples: 8,
            sigma_min: 1e-6,
            sigma_max: 16.0,
            sigma_start: 1e-2,
            tol: 0.01,
            loss: SearchLoss::ClassificationError,
        }
    }
}

/// Where the search ended relative to its bracket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaBound {
    Interior,
    /// The loss stayed below target up to `sigma_max`.
    AtMax,
    /// The loss already exceeded the target at `sigma_min`.
    AtMin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSearchResult {
    pub sigma: f64,
    pub bound: SigmaBound,
    /// Every evaluated `(sigma, estimated loss)` pair in evaluation order.
    pub evaluations: Vec<(f64, f64)>,
}

impl SigmaSearchResult {
    /// Whether the evaluated losses are non-decreasing in sigma.
    pub fn is_monotone(&self) -> bool {
        let mut pts = self.evaluations.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        pts.windows(2).all(|w| w[0].1 <= w[1].1)
    }
}

/// Generic search over an estimated loss curve `loss(sigma)`. `loss(0)` must
/// already be below the target.
pub fn sigma_search_fn(
    mut loss: impl FnMut(f64) -> f64,
    opts: &SigmaSearchOptions,
) -> Result<SigmaSearchResult, MeasureError> {
    if !(opts.sigma_min > 0.0 && opts.sigma_min < opts.sigma_max && opts.tol > 0.0) {
        return Err(MeasureError::Context("invalid sigma search bracket".into()));
    }
    let base = loss(0.0);
    if base.is_nan() || base >= opts.target {
        return Err(MeasureError::SearchInfeasible {
            loss: base,
            target: opts.target,
        });
    }
    let mut evaluations = Vec::new();
    let mut eval = |s: f64, evaluations: &mut Vec<(f64, f64)>| {
        let v = loss(s);
        evaluations.push((s, v));
        v <= opts.target
    };

    let start = opts.sigma_start.clamp(opts.sigma_min, opts.sigma_max);
    let (mut lo, mut hi);
    if eval(start, &mut evaluations) {
        lo = start;
        loop {
            if lo >= opts.sigma_max {
                return Ok(SigmaSearchResult {
                    sigma: opts.sigma_max,
                    bound: SigmaBound::AtMax,
                    evaluations,
                });
            }
            let next = (lo * 2.0).min(opts.sigma_max);
            if eval(next, &mut evaluations) {
                lo = next;
            } else {
                hi = next;
                break;
            }
        }
    } else {
        hi = start;
        loop {
            if hi <= opts.sigma_min {
                return Ok(SigmaSearchResult {
                    sigma: opts.sigma_min,
                    bound: SigmaBound::AtMin,
                    evaluations,
                });
            }
            let next = (hi / 2.0).max(opts.sigma_min);
            if eval(next, &mut evaluations) {
                lo = next;
                break;
            }
            hi = next;
        }
    }

    while hi > lo * (1.0 + opts.tol) {
        let mid = 0.5 * (lo + hi);
        if eval(mid, &mut evaluations) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(SigmaSearchResult {
        sigma: lo,
        bound: SigmaBound::Interior,
        evaluations,
    })
}

/// Monte Carlo estimate of the perturbed training loss with fixed standard
/// normal draws, so every candidate sigma sees the same noise directions.
pub struct PerturbedLoss<'a> {
    net: &'a Network,
    data: &'a Dataset,
    mode: PerturbMode,
    epsilon: f64,
    loss: SearchLoss,
    base: Vec<f64>,
    noise: Vec<Vec<f64>>,
}

impl<'a> PerturbedLoss<'a> {
    pub fn new(
        net: &'a Network,
        data: &'a Dataset,
        mode: PerturbMode,
        epsilon: f64,
        mc_samples: usize,
        loss: SearchLoss,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = net.count_params();
        let noise = (0..mc_samples.max(1))
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        Self {
            net,
            data,
            mode,
            epsilon,
            loss,
            base: net.flat_params(),
            noise,
        }
    }

    pub fn estimate(&self, sigma: f64) -> f64 {
        if sigma == 0.0 {
            return self.loss_of(self.net);
        }
        let mut work = self.net.clone();
        let mut flat = vec![0.0; self.base.len()];
        let mut total = 0.0;
        for z in &self.noise {
            perturb_flat(&self.base, z, sigma, self.mode, self.epsilon, &mut flat);
            work.set_flat_params(&flat).expect("same parameter count");
            total += self.loss_of(&work);
        }
        total / self.noise.len() as f64
    }

    fn loss_of(&self, net: &Network) -> f64 {
        let mut scratch = ForwardScratch::new(net);
        let mut acc = 0.0;
        for i in 0..self.data.len() {
            let logits = net.forward_row(self.data.row(i), &mut scratch);
            let y = self.data.labels[i];
            acc += match self.loss {
                SearchLoss::ClassificationError => (argmax(logits) != y) as u8 as f64,
                SearchLoss::CrossEntropy => {
                    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
                    lse - logits[y]
                }
            };
        }
        let v = acc / self.data.len() as f64;
        // A non-finite loss means the perturbation blew the network up.
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }
}

/// Sigma (isotropic) or sigma' (magnitude-aware) for a trained network.
pub fn sigma_search(
    net: &Network,
    data: &Dataset,
    mode: PerturbMode,
    epsilon: f64,
    opts: &SigmaSearchOptions,
    seed: u64,
) -> Result<SigmaSearchResult, MeasureError> {
    if data.is_empty() {
        return Err(MeasureError::EmptyTrainSet);
    }
    let est = PerturbedLoss::new(net, data, mode, epsilon, opts.mc_samples, opts.loss, seed);
    sigma_search_fn(|s| est.estimate(s), opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_crossing_found() {
        let opts = SigmaSearchOptions::default();
        let r = sigma_search_fn(|s| s.min(1.0), &opts).unwrap();
        assert_eq!(r.bound, SigmaBound::Interior);
        assert!(r.sigma <= 0.1);
        assert!(r.sigma * (1.0 + opts.tol) > 0.1);
        assert!(r.is_monotone());
    }

    #[test]
    fn stub_from_below_the_start() {
        let opts = SigmaSearchOptions::default();
        let r = sigma_search_fn(|s| (1000.0 * s).min(1.0), &opts).unwrap();
        assert!(r.sigma <= 1e-4 && r.sigma * 1.01 > 1e-4, "{}", r.sigma);
    }

    #[test]
    fn flat_curve_hits_max() {
        let r = sigma_search_fn(|_| 0.0, &SigmaSearchOptions::default()).unwrap();
        assert_eq!(r.bound, SigmaBound::AtMax);
        assert_eq!(r.sigma, 16.0);
    }

    #[test]
    fn steep_curve_hits_min() {
        let r = sigma_search_fn(|s| if s > 0.0 { 1.0 } else { 0.0 }, &SigmaSearchOptions::default())
            .unwrap();
        assert_eq!(r.bound, SigmaBound::AtMin);
    }

    #[test]
    fn infeasible_when_base_loss_too_high() {
        let e = sigma_search_fn(|_| 0.5, &SigmaSearchOptions::default()).unwrap_err();
        assert!(matches!(e, MeasureError::SearchInfeasible { .. }));
    }
}
