use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Layer, LayerKind, LayerSpec, NnError, Tensor};

/// Gaussian weight perturbation scheme used by the flatness measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbMode {
    /// `u_i ~ N(0, sigma^2)`
    Isotropic,
    /// `u_i ~ N(0, sigma^2 w_i^2 + epsilon^2)`
    MagnitudeAware,
}

/// A feed-forward ReLU network: ReLU between weight layers, identity at the
/// output. The initial parameters are kept alongside the current ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
    init: Vec<Layer>,
}

impl Network {
    /// Builds a network whose initial parameters equal the given ones.
    pub fn new(layers: Vec<Layer>) -> Result<Self, NnError> {
        let init = layers.clone();
        Self::with_init(layers, init)
    }

    pub fn with_init(layers: Vec<Layer>, init: Vec<Layer>) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::InvalidNetwork("a network needs at least one layer".into()));
        }
        if layers.len() != init.len() {
            return Err(NnError::InvalidNetwork(format!(
                "{} layers but {} initial layers",
                layers.len(),
                init.len()
            )));
        }
        for pair in layers.windows(2) {
            if pair[0].spec.output_dim() != pair[1].spec.input_dim() {
                return Err(NnError::Dimension {
                    context: "layer chaining",
                    expected: pair[0].spec.output_dim(),
                    got: pair[1].spec.input_dim(),
                });
            }
        }
        for (l, l0) in layers.iter().zip(&init) {
            if l.spec != l0.spec {
                return Err(NnError::InvalidNetwork(
                    "initial parameters do not match layer specs".into(),
                ));
            }
        }
        Ok(Self { layers, init })
    }

    /// He-style initialization: weights `N(0, 2 / fan_in)` with the fan-in
    /// counting kernel taps for convolutions, zero biases.
    pub fn he_init(specs: &[LayerSpec], seed: u64) -> Result<Self, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            spec.validate()?;
            let taps = match spec.kind {
                LayerKind::Dense => 1,
                LayerKind::Conv2d { kernel_size, .. } => kernel_size * kernel_size,
            };
            let std = (2.0 / (spec.fan_in * taps) as f64).sqrt();
            let shape = spec.weight_shape();
            let n = shape.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    std * z
                })
                .collect();
            let bias = spec.has_bias.then(|| Tensor::zeros(vec![spec.fan_out]));
            layers.push(Layer::new(*spec, Tensor::new(shape, data)?, bias)?);
        }
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn init_layers(&self) -> &[Layer] {
        &self.init
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.output_dim()
    }

    /// Total trainable scalars, biases included.
    pub fn count_params(&self) -> usize {
        self.layers.iter().map(|l| l.spec.num_params()).sum()
    }

    /// Runs a batch of shape `[n, input_dim]` through the network.
    pub fn forward(&self, inputs: &Tensor) -> Result<Tensor, NnError> {
        if inputs.shape().len() != 2 || inputs.row_len() != self.input_dim() {
            return Err(NnError::Dimension {
                context: "forward input",
                expected: self.input_dim(),
                got: inputs.row_len(),
            });
        }
        let n = inputs.rows();
        let out_dim = self.output_dim();
        let mut out = Vec::with_capacity(n * out_dim);
        let mut scratch = ForwardScratch::new(self);
        for i in 0..n {
            out.extend_from_slice(self.forward_row(inputs.row(i), &mut scratch));
        }
        Tensor::new(vec![n, out_dim], out)
    }

    /// Forward pass for one example using caller-owned buffers.
    pub fn forward_row<'a>(&self, x: &[f64], scratch: &'a mut ForwardScratch) -> &'a [f64] {
        let last = self.layers.len() - 1;
        scratch.a[..x.len()].copy_from_slice(x);
        let mut len = x.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let out_len = layer.spec.output_dim();
            let (a, b) = (&scratch.a[..len], &mut scratch.b[..out_len]);
            layer.apply_linear(a, b);
            layer.add_bias(b);
            if i != last {
                b.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut scratch.a, &mut scratch.b);
            len = out_len;
        }
        &scratch.a[..len]
    }

    /// Evaluates the network with every parameter squared on an all-ones
    /// input. All intermediate values are nonnegative, so the ReLUs act as
    /// the identity and the summed output is the squared path norm.
    pub fn forward_squared_ones(&self) -> Vec<f64> {
        let squared: Vec<Layer> = self.layers.iter().map(|l| l.map_params(|v| v * v)).collect();
        let net = Network {
            init: squared.clone(),
            layers: squared,
        };
        let ones = vec![1.0; self.input_dim()];
        let mut scratch = ForwardScratch::new(&net);
        net.forward_row(&ones, &mut scratch).to_vec()
    }

    /// Current parameters flattened layer by layer as `(W_1, b_1, W_2, ...)`.
    pub fn flat_params(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    /// Initial parameters flattened in the same order as [`Self::flat_params`].
    pub fn flat_init_params(&self) -> Vec<f64> {
        flatten(&self.init)
    }

    /// Replaces the current parameters from a flat vector.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.count_params() {
            return Err(NnError::Dimension {
                context: "flat parameter vector",
                expected: self.count_params(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let n = layer.weight.len();
            layer.weight.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
            if let Some(b) = &mut layer.bias {
                let n = b.len();
                b.data_mut().copy_from_slice(&flat[offset..offset + n]);
                offset += n;
            }
        }
        Ok(())
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Copy with every weight tensor multiplied by `alpha` (biases and the
    /// initial parameters untouched).
    pub fn with_scaled_weights(&self, alpha: f64) -> Network {
        let mut out = self.clone();
        for l in &mut out.layers {
            l.weight = l.weight.scaled(alpha);
        }
        out
    }

    /// Copy whose initial parameters are reset to the current ones.
    pub fn rebased(&self) -> Network {
        Network {
            layers: self.layers.clone(),
            init: self.layers.clone(),
        }
    }

    /// Gaussian perturbation of the current parameters, deterministic in
    /// `seed`. The initial parameters are carried over unchanged.
    pub fn perturb(&self, sigma: f64, mode: PerturbMode, epsilon: f64, seed: u64) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..self.count_params())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let base = self.flat_params();
        let mut out = self.clone();
        let mut flat = vec![0.0; base.len()];
        perturb_flat(&base, &noise, sigma, mode, epsilon, &mut flat);
        out.set_flat_params(&flat)
            .expect("flat vector built from the same network");
        out
    }
}

/// Writes `base + scale_i * noise_i` into `out`, where `scale_i` is `sigma`
/// (isotropic) or `sqrt(sigma^2 base_i^2 + epsilon^2)` (magnitude-aware).
pub fn perturb_flat(
    base: &[f64],
    noise: &[f64],
    sigma: f64,
    mode: PerturbMode,
    epsilon: f64,
    out: &mut [f64],
) {
    for ((o, &w), &z) in out.iter_mut().zip(base).zip(noise) {
        let scale = match mode {
            PerturbMode::Isotropic => sigma,
            PerturbMode::MagnitudeAware => (sigma * sigma * w * w + epsilon * epsilon).sqrt(),
        };
        *o = w + scale * z;
    }
}

fn flatten(layers: &[Layer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(l.weight.data());
        if let Some(b) = &l.bias {
            out.extend_from_slice(b.data());
        }
    }
    out
}

/// Reusable activation buffers for [`Network::forward_row`].
#[derive(Debug, Clone)]
pub struct ForwardScratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl ForwardScratch {
    pub fn new(net: &Network) -> Self {
        let widest = net
            .layers
            .iter()
            .map(|l| l.spec.input_dim().max(l.spec.output_dim()))
            .max()
            .unwrap_or(0);
        Self {
            a: vec![0.0; widest],
            b: vec![0.0; widest],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_one_one() -> Network {
        Network::new(vec![
            Layer::dense(2, 1, vec![1.0, 2.0]).unwrap(),
            Layer::dense(1, 1, vec![3.0]).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn identity_forward() {
        let net = Network::new(vec![Layer::dense(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()]).unwrap();
        let x = Tensor::matrix(1, 2, vec![3.0, -1.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), &[3.0, -1.0]);
    }

    #[test]
    fn two_layer_hand_evaluation() {
        let net = Network::new(vec![
            Layer::dense(2, 1, vec![1.0, 2.0]).unwrap(),
            Layer::dense(1, 1, vec![-1.0]).unwrap(),
        ])
        .unwrap();
        let x = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(net.forward(&x).unwrap().data(), &[-3.0]);
    }

    #[test]
    fn empty_batch_gives_empty_logits() {
        let net = two_one_one();
        let out = net.forward(&Tensor::zeros(vec![0, 2])).unwrap();
        assert_eq!(out.shape(), &[0, 1]);
        assert!(out.is_empty());
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let net = two_one_one();
        assert!(matches!(
            net.forward(&Tensor::zeros(vec![1, 3])),
            Err(NnError::Dimension { .. })
        ));
    }

    #[test]
    fn squared_ones_examples() {
        assert_eq!(two_one_one().forward_squared_ones(), vec![45.0]);
        let eye = Network::new(vec![Layer::dense(
            3,
            3,
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        )
        .unwrap()])
        .unwrap();
        assert_eq!(eye.forward_squared_ones(), vec![1.0; 3]);
        let zero = Network::new(vec![Layer::dense(2, 2, vec![0.0; 4]).unwrap()]).unwrap();
        assert_eq!(zero.forward_squared_ones(), vec![0.0; 2]);
    }

    #[test]
    fn empty_network_rejected() {
        assert!(Network::new(vec![]).is_err());
    }

    #[test]
    fn dense_param_count() {
        let net = Network::he_init(&[LayerSpec::dense(2, 3, true)], 1).unwrap();
        assert_eq!(net.count_params(), 9);
    }

    #[test]
    fn perturb_is_deterministic_and_pure() {
        let net = Network::he_init(&[LayerSpec::dense(4, 3, true), LayerSpec::dense(3, 2, true)], 7)
            .unwrap();
        let before = net.clone();
        let a = net.perturb(0.1, PerturbMode::Isotropic, 0.0, 11);
        let b = net.perturb(0.1, PerturbMode::Isotropic, 0.0, 11);
        assert_eq!(a, b);
        assert_eq!(net, before);
        assert_ne!(a.flat_params(), net.flat_params());
        assert_eq!(a.flat_init_params(), net.flat_init_params());
    }

    #[test]
    fn tiny_sigma_barely_moves_weights() {
        let net = Network::he_init(&[LayerSpec::dense(5, 5, true)], 3).unwrap();
        let p = net.perturb(1e-12, PerturbMode::Isotropic, 0.0, 5);
        let max_change = net
            .flat_params()
            .iter()
            .zip(p.flat_params())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_change < 1e-9);
    }

    #[test]
    fn magnitude_aware_zero_weight_has_epsilon_variance() {
        // A single zero weight: the perturbation is epsilon * z, variance epsilon^2.
        let net = Network::new(vec![Layer::dense(1, 1, vec![0.0]).unwrap()]).unwrap();
        let eps = 1e-3;
        let n = 20_000;
        let mut sum_sq = 0.0;
        for s in 0..n {
            let p = net.perturb(0.5, PerturbMode::MagnitudeAware, eps, s);
            sum_sq += p.flat_params()[0].powi(2);
        }
        let var = sum_sq / n as f64;
        // Sample variance of 20k draws is within ~4 standard errors (sqrt(2/n)) of 1e-6.
        assert!((var / 1e-6 - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt(), "{var}");

        let mut flat = [0.0];
        perturb_flat(&[0.0], &[1.0], 0.5, PerturbMode::MagnitudeAware, eps, &mut flat);
        assert_eq!(flat[0], eps);
    }

    #[test]
    fn he_init_seeds_differ_but_shapes_match() {
        let specs = [LayerSpec::dense(16, 8, true), LayerSpec::dense(8, 4, true)];
        let a = Network::he_init(&specs, 1).unwrap();
        let b = Network::he_init(&specs, 2).unwrap();
        assert_ne!(a.flat_params(), b.flat_params());
        assert_eq!(a.count_params(), b.count_params());
        assert_eq!(a, Network::he_init(&specs, 1).unwrap());
    }
}
