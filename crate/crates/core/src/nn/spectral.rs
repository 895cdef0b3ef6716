//! Spectral norms of layer linear maps.
//!
//! The default route is power iteration on `A^T A` using the layer's own
//! forward and adjoint operators, which covers dense and convolutional layers
//! alike. [`materialize_linear_map`] builds the explicit matrix for small
//! layers so the iteration can be checked against a full SVD.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Layer, NnError, Tensor};

/// Default cap on either side of a materialized map.
pub const DEFAULT_MATERIALIZE_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIterOptions {
    /// Relative tolerance on the singular-value estimate.
    pub tol: f64,
    pub max_iter: usize,
    /// Seed of the Gaussian start vector.
    pub seed: u64,
}

impl Default for PowerIterOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 10_000,
            seed: 0x5eed_0f_5eed,
        }
    }
}

/// Largest singular value of the layer's linear map (bias excluded).
pub fn spectral_norm(layer: &Layer) -> Result<f64, NnError> {
    spectral_norm_with(layer, PowerIterOptions::default())
}

pub fn spectral_norm_with(layer: &Layer, opts: PowerIterOptions) -> Result<f64, NnError> {
    let n_in = layer.spec.input_dim();
    let n_out = layer.spec.output_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut v: Vec<f64> = (0..n_in).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut v);
    let mut u = vec![0.0; n_out];
    let mut w = vec![0.0; n_in];
    let mut sigma = 0.0;

    for iter in 0..opts.max_iter {
        layer.apply_linear(&v, &mut u);
        let norm_u = norm(&u);
        if norm_u == 0.0 {
            // v lies in the null space; with a random start this means A == 0
            // up to measure-zero coincidences.
            if layer.weight.data().iter().all(|&x| x == 0.0) {
                return Ok(0.0);
            }
            v.iter_mut()
                .for_each(|x| *x = StandardNormal.sample(&mut rng));
            normalize(&mut v);
            continue;
        }
        u.iter_mut().for_each(|x| *x /= norm_u);
        layer.apply_adjoint(&u, &mut w);
        let next = norm_u;
        // Residual of the singular pair (v, u, next): A^T u - sigma v.
        let residual = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - next * b).powi(2))
            .sum::<f64>()
            .sqrt();
        let change = (next - sigma).abs();
        sigma = next;
        let norm_w = norm(&w);
        if residual <= opts.tol * sigma && change <= opts.tol * sigma && iter > 0 {
            return Ok(sigma.max(norm_w));
        }
        v.copy_from_slice(&w);
        v.iter_mut().for_each(|x| *x /= norm_w);
    }
    Err(NnError::NonConvergence {
        estimate: sigma,
        iterations: opts.max_iter,
    })
}

/// Explicit `output_dim x input_dim` matrix `M` with `M x == layer(x)` for
/// the bias-free map, built by probing with basis vectors.
pub fn materialize_linear_map(layer: &Layer, cap: usize) -> Result<Tensor, NnError> {
    let n_in = layer.spec.input_dim();
    let n_out = layer.spec.output_dim();
    let size = n_in.max(n_out);
    if size > cap {
        return Err(NnError::SizeCap { size, cap });
    }
    let mut m = vec![0.0; n_out * n_in];
    let mut e = vec![0.0; n_in];
    let mut col = vec![0.0; n_out];
    for j in 0..n_in {
        e[j] = 1.0;
        layer.apply_linear(&e, &mut col);
        e[j] = 0.0;
        for (i, &c) in col.iter().enumerate() {
            m[i * n_in + j] = c;
        }
    }
    Tensor::matrix(n_out, n_in, m)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
