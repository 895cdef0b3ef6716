//! Synthetic datasets and CSV ingestion.

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::nn::{ForwardScratch, LayerSpec, Network, Tensor};
use crate::seed::derive_seed;

use super::TrainerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DatasetKind {
    /// Labels are the argmax of a fixed random ReLU network.
    TeacherNetwork { hidden_width: usize, hidden_layers: usize },
    /// One isotropic unit-variance Gaussian per class, centres `separation`
    /// apart along distinct coordinate axes.
    GaussianBlobs { separation: f64 },
    /// CSV rows `x_1, ..., x_d, label` without a header.
    ExternalFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub id: String,
    pub kind: DatasetKind,
    pub input_dim: usize,
    pub num_classes: usize,
    /// Probability that a label is replaced by a uniformly random class.
    #[serde(default)]
    pub noise_level: f64,
    pub generator_seed: u64,
    pub test_size: usize,
}

/// Feature rows with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self, TrainerError> {
        if inputs.shape().len() != 2 || inputs.rows() != labels.len() {
            return Err(TrainerError::Data("inputs and labels disagree in length".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(TrainerError::Data(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.row_len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }
}

/// Builds disjoint train and test sets. Train points are the first
/// `train_size` draws of one stream and test points come from a separate
/// stream, so smaller train sets are prefixes of larger ones and the test set
/// is shared across train sizes.
pub fn make_dataset(
    spec: &DatasetSpec,
    train_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<(Dataset, Dataset), TrainerError> {
    if train_size == 0 || test_size == 0 {
        return Err(TrainerError::Data("train and test sizes must be positive".into()));
    }
    if spec.input_dim == 0 || spec.num_classes < 2 {
        return Err(TrainerError::Data(
            "need a positive input dimension and at least two classes".into(),
        ));
    }
    if !(0.0..=1.0).contains(&spec.noise_level) {
        return Err(TrainerError::Data("noise_level must lie in [0, 1]".into()));
    }
    let s = seed.to_string();
    match &spec.kind {
        DatasetKind::TeacherNetwork {
            hidden_width,
            hidden_layers,
        } => {
            let teacher = teacher_network(spec, *hidden_width, *hidden_layers, seed)?;
            let mut scratch = ForwardScratch::new(&teacher);
            let mut label = |x: &[f64]| argmax(teacher.forward_row(x, &mut scratch));
            let train = sample_set(spec, train_size, derive_seed(&["data", &s, "train"]), &mut label)?;
            let test = sample_set(spec, test_size, derive_seed(&["data", &s, "test"]), &mut label)?;
            Ok((train, test))
        }
        DatasetKind::GaussianBlobs { separation } => {
            let train = blobs(spec, *separation, train_size, derive_seed(&["data", &s, "train"]))?;
            let test = blobs(spec, *separation, test_size, derive_seed(&["data", &s, "test"]))?;
            Ok((train, test))
        }
        DatasetKind::ExternalFile { path } => load_external(spec, path, train_size, test_size, seed),
    }
}

/// The labelling network of a teacher dataset. The output bias is set to
/// minus the mean logit over a calibration sample so that classes come out
/// roughly balanced.
pub fn teacher_network(
    spec: &DatasetSpec,
    hidden_width: usize,
    hidden_layers: usize,
    seed: u64,
) -> Result<Network, TrainerError> {
    let mut specs = Vec::with_capacity(hidden_layers + 1);
    let mut fan_in = spec.input_dim;
    for _ in 0..hidden_layers {
        specs.push(LayerSpec::dense(fan_in, hidden_width, false));
        fan_in = hidden_width;
    }
    specs.push(LayerSpec::dense(fan_in, spec.num_classes, true));
    let net = Network::he_init(&specs, derive_seed(&["teacher", &seed.to_string()]))?;

    const CALIBRATION: usize = 4096;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&["teacher-calibration", &seed.to_string()]));
    let mut scratch = ForwardScratch::new(&net);
    let mut mean = vec![0.0; spec.num_classes];
    let mut x = vec![0.0; spec.input_dim];
    for _ in 0..CALIBRATION {
        x.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
        for (m, &z) in mean.iter_mut().zip(net.forward_row(&x, &mut scratch)) {
            *m += z / CALIBRATION as f64;
        }
    }
    let mut layers = net.layers().to_vec();
    let last = layers.len() - 1;
    layers[last].bias = Some(Tensor::vector(mean.iter().map(|m| -m).collect()));
    Ok(Network::new(layers)?)
}

fn sample_set(
    spec: &DatasetSpec,
    n: usize,
    stream: u64,
    label: &mut dyn FnMut(&[f64]) -> usize,
) -> Result<Dataset, TrainerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(stream ^ 0x9e37_79b9_7f4a_7c15);
    let d = spec.input_dim;
    let mut xs = Vec::with_capacity(n * d);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut y = label(&row);
        let flip: f64 = noise_rng.random();
        let replacement = noise_rng.random_range(0..spec.num_classes);
        if flip < spec.noise_level {
            y = replacement;
        }
        xs.extend_from_slice(&row);
        ys.push(y);
    }
    Dataset::new(Tensor::new(vec![n, d], xs)?, ys, spec.num_classes)
}

fn blobs(spec: &DatasetSpec, separation: f64, n: usize, stream: u64) -> Result<Dataset, TrainerError> {
    let d = spec.input_dim;
    let k = spec.num_classes;
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let mut xs = Vec::with_capacity(n * d);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let mut y = i % k;
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            let centre = if j == y % d {
                // Classes beyond `d` share an axis but sit on alternating sides.
                let side = if (y / d) % 2 == 0 { 1.0 } else { -1.0 };
                side * separation / std::f64::consts::SQRT_2
            } else {
                0.0
            };
            xs.push(centre + z);
        }
        let flip: f64 = rng.random();
        let replacement = rng.random_range(0..k);
        if flip < spec.noise_level {
            y = replacement;
        }
        ys.push(y);
    }
    Dataset::new(Tensor::new(vec![n, d], xs)?, ys, k)
}

fn load_external(
    spec: &DatasetSpec,
    path: &std::path::Path,
    train_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<(Dataset, Dataset), TrainerError> {
    let ingest = |msg: String| TrainerError::Ingest {
        path: path.display().to_string(),
        message: msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingest(e.to_string()))?;
    let d = spec.input_dim;
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| ingest(e.to_string()))?;
        if rec.len() != d + 1 {
            return Err(ingest(format!(
                "line {}: expected {} fields, found {}",
                line + 1,
                d + 1,
                rec.len()
            )));
        }
        let mut x = Vec::with_capacity(d);
        for field in rec.iter().take(d) {
            let v: f64 = field
                .parse()
                .map_err(|_| ingest(format!("line {}: bad feature `{field}`", line + 1)))?;
            if !v.is_finite() {
                return Err(ingest(format!("line {}: non-finite feature", line + 1)));
            }
            x.push(v);
        }
        let y: usize = rec[d]
            .parse()
            .map_err(|_| ingest(format!("line {}: bad label `{}`", line + 1, &rec[d])))?;
        if y >= spec.num_classes {
            return Err(ingest(format!("line {}: label {y} out of range", line + 1)));
        }
        rows.push((x, y));
    }
    if rows.len() < train_size + test_size {
        return Err(ingest(format!(
            "{} rows available, {} requested",
            rows.len(),
            train_size + test_size
        )));
    }
    // Fixed split: the test set is the tail of a seeded permutation, train
    // sets are prefixes of the head.
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&["ingest", &seed.to_string()])));
    let (head, tail) = order.split_at(rows.len() - test_size);
    let build = |idx: &[usize]| -> Result<Dataset, TrainerError> {
        let mut xs = Vec::with_capacity(idx.len() * d);
        let mut ys = Vec::with_capacity(idx.len());
        for &i in idx {
            xs.extend_from_slice(&rows[i].0);
            ys.push(rows[i].1);
        }
        Dataset::new(Tensor::new(vec![idx.len(), d], xs)?, ys, spec.num_classes)
    };
    Ok((build(&head[..train_size])?, build(tail)?))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
