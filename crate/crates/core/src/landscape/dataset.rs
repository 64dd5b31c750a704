use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::mlp::{Activation, Mlp, MlpModel};
use crate::error::{LabError, Result};

/// Labelled classification data, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    input_dim: usize,
    classes: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
    corrupted: Vec<bool>,
}

impl Dataset {
    pub fn new(input_dim: usize, classes: usize, inputs: Vec<f64>, labels: Vec<usize>, corrupted: Vec<bool>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(LabError::invalid("dataset must contain at least one example"));
        }
        if inputs.len() != n * input_dim || corrupted.len() != n {
            return Err(LabError::invalid("dataset field lengths disagree"));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(LabError::invalid(format!("label {bad} out of range for {classes} classes")));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(LabError::non_finite("dataset inputs"));
        }
        Ok(Self { input_dim, classes, inputs, labels, corrupted })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input(&self, n: usize) -> &[f64] {
        &self.inputs[n * self.input_dim..(n + 1) * self.input_dim]
    }

    pub fn label(&self, n: usize) -> usize {
        self.labels[n]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn corrupted_mask(&self) -> &[bool] {
        &self.corrupted
    }

    pub fn num_corrupted(&self) -> usize {
        self.corrupted.iter().filter(|&&c| c).count()
    }

    fn split_off(&mut self, at: usize) -> Dataset {
        Dataset {
            input_dim: self.input_dim,
            classes: self.classes,
            inputs: self.inputs.split_off(at * self.input_dim),
            labels: self.labels.split_off(at),
            corrupted: self.corrupted.split_off(at),
        }
    }
}

/// How clean labels are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    /// One isotropic Gaussian blob per class, centers drawn from N(0, I).
    GaussianBlobs { spread: f64 },
    /// Labels from a fixed random tanh MLP `input → hidden… → classes`.
    /// `temperature = 0` takes the argmax; otherwise labels are sampled from
    /// `softmax(logits / temperature)`, i.e. the teacher's predictive law.
    Teacher { hidden: Vec<usize>, temperature: f64, weight_scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub generator: Generator,
    pub corrupt_fraction: f64,
    pub seed: u64,
}

impl DatasetSpec {
    fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(LabError::invalid("dataset size must be at least 1"));
        }
        if self.input_dim == 0 {
            return Err(LabError::invalid("input_dim must be at least 1"));
        }
        if self.classes < 2 {
            return Err(LabError::invalid("classes must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.corrupt_fraction) {
            return Err(LabError::invalid(format!("corrupt_fraction {} outside [0, 1]", self.corrupt_fraction)));
        }
        match &self.generator {
            Generator::GaussianBlobs { spread } if !(*spread > 0.0) => {
                Err(LabError::invalid("blob spread must be positive"))
            }
            Generator::Teacher { temperature, weight_scale, .. } if !(*temperature >= 0.0 && *weight_scale > 0.0) => {
                Err(LabError::invalid("teacher temperature must be >= 0 and weight_scale > 0"))
            }
            _ => Ok(()),
        }
    }

    /// The teacher network this spec labels with, if it uses one.
    pub fn teacher(&self) -> Option<MlpModel> {
        match &self.generator {
            Generator::Teacher { hidden, weight_scale, .. } => {
                let mut rng = stream(self.seed, 0);
                Some(build_teacher(self.input_dim, hidden, self.classes, *weight_scale, &mut rng))
            }
            Generator::GaussianBlobs { .. } => None,
        }
    }
}

/// Dataset streams start at 16 so a dataset and a trajectory sharing a
/// seed never draw from the same stream (trajectories use 0–2).
const STREAM_BASE: u64 = 16;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_BASE + id);
    rng
}

fn build_teacher(input_dim: usize, hidden: &[usize], classes: usize, scale: f64, rng: &mut ChaCha8Rng) -> MlpModel {
    let mut sizes = vec![input_dim];
    sizes.extend_from_slice(hidden);
    sizes.push(classes);
    let arch = Mlp::new(sizes, Activation::Tanh).expect("teacher layer sizes are positive");
    let params = arch.init_params(rng, scale);
    MlpModel::new(arch, params).expect("teacher parameter count matches")
}

fn generate_clean(spec: &DatasetSpec, total: usize) -> Dataset {
    let mut param_rng = stream(spec.seed, 0);
    let mut input_rng = stream(spec.seed, 1);
    let mut label_rng = stream(spec.seed, 2);
    let d = spec.input_dim;
    let c = spec.classes;
    let mut inputs = Vec::with_capacity(total * d);
    let mut labels = Vec::with_capacity(total);
    match &spec.generator {
        Generator::GaussianBlobs { spread } => {
            let centers: Vec<f64> = (0..c * d).map(|_| param_rng.sample(StandardNormal)).collect();
            for _ in 0..total {
                let y = input_rng.random_range(0..c);
                for k in 0..d {
                    let z: f64 = input_rng.sample(StandardNormal);
                    inputs.push(centers[y * d + k] + spread * z);
                }
                labels.push(y);
            }
        }
        Generator::Teacher { hidden, temperature, weight_scale } => {
            let teacher = build_teacher(d, hidden, c, *weight_scale, &mut param_rng);
            for _ in 0..total {
                let x: Vec<f64> = (0..d).map(|_| input_rng.sample(StandardNormal)).collect();
                let logits = teacher.logits(&x);
                let y = if *temperature == 0.0 {
                    argmax(&logits)
                } else {
                    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
                    sample_categorical(&softmax(&scaled), &mut label_rng)
                };
                inputs.extend_from_slice(&x);
                labels.push(y);
            }
        }
    }
    Dataset { input_dim: d, classes: c, inputs, labels, corrupted: vec![false; total] }
}

/// Replaces exactly `round(fraction · N)` labels, chosen uniformly without
/// replacement, by a label drawn uniformly from the other classes.
fn corrupt(data: &mut Dataset, fraction: f64, seed: u64) {
    let n = data.len();
    let k = (fraction * n as f64).round() as usize;
    let mut rng = stream(seed, 3);
    let mut chosen = index::sample(&mut rng, n, k).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let shift = rng.random_range(1..data.classes);
        data.labels[i] = (data.labels[i] + shift) % data.classes;
        data.corrupted[i] = true;
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn sample_categorical<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Deterministic synthetic classification data.
pub fn make_synthetic_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut data = generate_clean(spec, spec.n);
    corrupt(&mut data, spec.corrupt_fraction, spec.seed);
    Ok(data)
}

/// Training set of `spec.n` examples plus a clean validation set of `n_val`
/// examples from the same generator. Corruption touches the training part only.
pub fn make_train_val(spec: &DatasetSpec, n_val: usize) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    if n_val == 0 {
        return Err(LabError::invalid("validation size must be at least 1"));
    }
    let mut data = generate_clean(spec, spec.n + n_val);
    let val = data.split_off(spec.n);
    corrupt(&mut data, spec.corrupt_fraction, spec.seed);
    Ok((data, val))
}
