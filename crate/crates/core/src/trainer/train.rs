//! Minibatch SGD with classical momentum on softmax cross-entropy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{ForwardScratch, LayerKind, Network};

use super::data::{argmax, Dataset};
use super::TrainerError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub momentum: f64,
    /// Stop once the full-train-set cross-entropy is at or below this.
    pub ce_target: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    /// Converged runs must also reach this training accuracy.
    pub min_train_accuracy: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            ce_target: 0.01,
            max_epochs: 2000,
            batch_size: 32,
            min_train_accuracy: 0.99,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// Loss or weights became non-finite.
    Diverged,
    /// Cross-entropy target not met within the epoch budget.
    MaxEpochs,
    /// Cross-entropy target met but training accuracy below the threshold.
    LowAccuracy,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    pub status: RunStatus,
    pub failure: Option<FailureReason>,
    /// Number of completed update epochs.
    pub epochs: usize,
    pub final_cross_entropy: f64,
    pub train_error: f64,
}

/// Trains `net` until the full-train-set cross-entropy reaches the target.
///
/// The target is checked before the first epoch and after every epoch.
/// Divergence is reported through the outcome status, not as an error.
pub fn train(
    net: Network,
    train_set: &Dataset,
    learning_rate: f64,
    opts: &TrainOptions,
    seed: u64,
) -> Result<TrainOutcome, TrainerError> {
    if !(learning_rate > 0.0) || !(opts.ce_target > 0.0) || opts.batch_size == 0 {
        return Err(TrainerError::Config(
            "learning rate, ce target and batch size must be positive".into(),
        ));
    }
    if train_set.is_empty() {
        return Err(TrainerError::Data("empty training set".into()));
    }
    if train_set.input_dim() != net.input_dim() || train_set.num_classes != net.output_dim() {
        return Err(TrainerError::Data(
            "dataset shape does not match the network".into(),
        ));
    }
    if net
        .layers()
        .iter()
        .any(|l| !matches!(l.spec.kind, LayerKind::Dense))
    {
        return Err(TrainerError::Config("training supports dense layers only".into()));
    }

    let mut net = net;
    let mut sgd = Sgd::new(&net);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = 0;

    loop {
        let (ce, err) = cross_entropy_and_error(&net, train_set);
        if !ce.is_finite() {
            return Ok(finish(net, epochs, ce, err, Some(FailureReason::Diverged)));
        }
        if ce <= opts.ce_target {
            let failure = (1.0 - err < opts.min_train_accuracy).then_some(FailureReason::LowAccuracy);
            return Ok(finish(net, epochs, ce, err, failure));
        }
        if epochs == opts.max_epochs {
            return Ok(finish(net, epochs, ce, err, Some(FailureReason::MaxEpochs)));
        }
        order.shuffle(&mut rng);
        for batch in order.chunks(opts.batch_size) {
            sgd.step(&mut net, train_set, batch, learning_rate, opts.momentum);
        }
        epochs += 1;
        if !net.layers().iter().all(|l| l.weight.is_finite()) {
            return Ok(finish(net, epochs, f64::NAN, 1.0, Some(FailureReason::Diverged)));
        }
    }
}

fn finish(
    network: Network,
    epochs: usize,
    ce: f64,
    err: f64,
    failure: Option<FailureReason>,
) -> TrainOutcome {
    TrainOutcome {
        network,
        status: if failure.is_none() {
            RunStatus::Converged
        } else {
            RunStatus::Failed
        },
        failure,
        epochs,
        final_cross_entropy: ce,
        train_error: err,
    }
}

/// Mean cross-entropy and classification error over the whole dataset.
pub fn cross_entropy_and_error(net: &Network, data: &Dataset) -> (f64, f64) {
    let mut scratch = ForwardScratch::new(net);
    let mut ce = 0.0;
    let mut wrong = 0usize;
    for i in 0..data.len() {
        let logits = net.forward_row(data.row(i), &mut scratch);
        let y = data.labels[i];
        ce += log_sum_exp(logits) - logits[y];
        if argmax(logits) != y {
            wrong += 1;
        }
    }
    let n = data.len() as f64;
    (ce / n, wrong as f64 / n)
}

/// Fraction of examples whose argmax logit (lowest index on ties) differs
/// from the label.
pub fn evaluate_error(net: &Network, data: &Dataset) -> Result<f64, TrainerError> {
    if data.is_empty() {
        return Err(TrainerError::Data("cannot evaluate on an empty dataset".into()));
    }
    let mut scratch = ForwardScratch::new(net);
    let wrong = (0..data.len())
        .filter(|&i| argmax(net.forward_row(data.row(i), &mut scratch)) != data.labels[i])
        .count();
    Ok(wrong as f64 / data.len() as f64)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Gradient buffers and momentum state for a dense network.
struct Sgd {
    grads: Vec<Vec<f64>>,
    bias_grads: Vec<Vec<f64>>,
    velocity: Vec<Vec<f64>>,
    bias_velocity: Vec<Vec<f64>>,
    /// Post-activation values per layer input, `acts[0]` is the example.
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl Sgd {
    fn new(net: &Network) -> Self {
        let layers = net.layers();
        let zeros_w = || layers.iter().map(|l| vec![0.0; l.weight.len()]).collect::<Vec<_>>();
        let zeros_b = || layers.iter().map(|l| vec![0.0; l.spec.fan_out]).collect::<Vec<_>>();
        let mut acts = vec![vec![0.0; net.input_dim()]];
        acts.extend(layers.iter().map(|l| vec![0.0; l.spec.fan_out]));
        Self {
            grads: zeros_w(),
            bias_grads: zeros_b(),
            velocity: zeros_w(),
            bias_velocity: zeros_b(),
            acts,
            deltas: zeros_b(),
        }
    }

    fn step(&mut self, net: &mut Network, data: &Dataset, batch: &[usize], lr: f64, momentum: f64) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
        self.bias_grads.iter_mut().for_each(|g| g.fill(0.0));
        let depth = net.depth();
        let scale = 1.0 / batch.len() as f64;

        for &i in batch {
            self.acts[0].copy_from_slice(data.row(i));
            for (l, layer) in net.layers().iter().enumerate() {
                let (head, tail) = self.acts.split_at_mut(l + 1);
                let out = &mut tail[0];
                layer.apply_linear(&head[l], out);
                layer.add_bias(out);
                if l + 1 != depth {
                    out.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
            // Softmax cross-entropy gradient at the logits.
            let logits = &self.acts[depth];
            let lse = log_sum_exp(logits);
            let y = data.labels[i];
            let top = &mut self.deltas[depth - 1];
            for (k, (d, &z)) in top.iter_mut().zip(logits).enumerate() {
                *d = (z - lse).exp() - if k == y { 1.0 } else { 0.0 };
            }
            for l in (0..depth).rev() {
                let layer = &net.layers()[l];
                let n_in = layer.spec.fan_in;
                let (lower, upper) = self.deltas.split_at_mut(l);
                let delta = &upper[0];
                let input = &self.acts[l];
                let g = &mut self.grads[l];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut g[o * n_in..(o + 1) * n_in];
                    for (gw, &a) in row.iter_mut().zip(input) {
                        *gw += d * a;
                    }
                }
                if layer.spec.has_bias {
                    for (gb, &d) in self.bias_grads[l].iter_mut().zip(delta) {
                        *gb += d;
                    }
                }
                if l > 0 {
                    let below = &mut lower[l - 1];
                    layer.apply_adjoint(delta, below);
                    // ReLU derivative at the layer input.
                    for (b, &a) in below.iter_mut().zip(input) {
                        if a <= 0.0 {
                            *b = 0.0;
                        }
                    }
                }
            }
        }

        for (l, layer) in net.layers_mut().iter_mut().enumerate() {
            let w = layer.weight.data_mut();
            for ((wi, vi), &gi) in w.iter_mut().zip(&mut self.velocity[l]).zip(&self.grads[l]) {
                *vi = momentum * *vi - lr * gi * scale;
                *wi += *vi;
            }
            if let Some(b) = &mut layer.bias {
                for ((bi, vi), &gi) in b
                    .data_mut()
                    .iter_mut()
                    .zip(&mut self.bias_velocity[l])
                    .zip(&self.bias_grads[l])
                {
                    *vi = momentum * *vi - lr * gi * scale;
                    *bi += *vi;
                }
            }
        }
    }
}
