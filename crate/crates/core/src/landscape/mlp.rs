use rand::Rng;
use rand_distr::StandardNormal;

use super::dataset::{argmax, Dataset};
use super::{check_dim, Evaluation, Landscape, LandscapeKind, ParameterVector};
use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    /// Piecewise linear; finite-difference curvature probes are unreliable with it.
    Relu,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully connected architecture with a softmax cross-entropy head.
///
/// Parameters are flattened layer by layer; within a layer the weight matrix
/// (shape `out × in`, row-major) comes first, followed by the `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    activation: Activation,
    offsets: Vec<usize>,
}

impl Mlp {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(LabError::invalid(format!("invalid layer sizes {layer_sizes:?}")));
        }
        let mut offsets = vec![0];
        for w in layer_sizes.windows(2) {
            let last = *offsets.last().unwrap();
            offsets.push(last + (w[0] + 1) * w[1]);
        }
        Ok(Self { layer_sizes, activation, offsets })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// `q = Σ_l (in_l + 1)·out_l`.
    pub fn num_params(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Weights ~ N(0, scale²/fan_in), biases zero.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R, scale: f64) -> ParameterVector {
        let mut p = vec![0.0; self.num_params()];
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let std = scale / (fan_in as f64).sqrt();
            let off = self.offsets[l];
            for w in &mut p[off..off + fan_in * fan_out] {
                *w = std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        ParameterVector::from_vec_unchecked(p)
    }

    fn workspace(&self) -> Workspace {
        Workspace {
            acts: self.layer_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            delta: vec![0.0; *self.layer_sizes.iter().max().unwrap()],
            delta_prev: vec![0.0; *self.layer_sizes.iter().max().unwrap()],
        }
    }

    /// Fills `ws.acts`; the last entry holds the logits.
    fn forward(&self, theta: &[f64], x: &[f64], ws: &mut Workspace) {
        ws.acts[0].copy_from_slice(x);
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = self.offsets[l];
            let weights = &theta[off..off + n_in * n_out];
            let biases = &theta[off + n_in * n_out..off + (n_in + 1) * n_out];
            let (prev, next) = ws.acts.split_at_mut(l + 1);
            let input = &prev[l];
            let output = &mut next[0];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let z = biases[o] + row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>();
                output[o] = if l == last { z } else { self.activation.apply(z) };
            }
        }
    }

    /// Cross-entropy of the current logits against `label`.
    fn example_loss(&self, ws: &Workspace, label: usize) -> f64 {
        let logits = ws.acts.last().unwrap();
        logsumexp(logits) - logits[label]
    }

    /// Adds `scale · ∂l/∂θ` to `grad`, assuming `forward` was just run.
    fn backward(&self, theta: &[f64], label: usize, scale: f64, ws: &mut Workspace, grad: &mut [f64]) {
        let nl = self.num_layers();
        let c = self.classes();
        {
            let logits = &ws.acts[nl];
            let lse = logsumexp(logits);
            for k in 0..c {
                ws.delta[k] = (logits[k] - lse).exp() - if k == label { 1.0 } else { 0.0 };
            }
        }
        for l in (0..nl).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = self.offsets[l];
            let input = &ws.acts[l];
            for o in 0..n_out {
                let d = scale * ws.delta[o];
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let weights = &theta[off..off + n_in * n_out];
                for i in 0..n_in {
                    let mut s = 0.0;
                    for o in 0..n_out {
                        s += weights[o * n_in + i] * ws.delta[o];
                    }
                    ws.delta_prev[i] = s * self.activation.derivative_from_output(input[i]);
                }
                std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
            }
        }
    }
}

struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

fn logsumexp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// An architecture together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    arch: Mlp,
    parameters: ParameterVector,
}

impl MlpModel {
    pub fn new(arch: Mlp, parameters: ParameterVector) -> Result<Self> {
        check_dim(arch.num_params(), parameters.len())?;
        Ok(Self { arch, parameters })
    }

    pub fn arch(&self) -> &Mlp {
        &self.arch
    }

    pub fn parameters(&self) -> &ParameterVector {
        &self.parameters
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut ws = self.arch.workspace();
        self.arch.forward(&self.parameters, x, &mut ws);
        ws.acts.pop().unwrap()
    }
}

/// Mean cross-entropy of an MLP over a training set, with an optional
/// held-out set for validation metrics.
#[derive(Debug, Clone)]
pub struct MlpLandscape {
    arch: Mlp,
    train: Dataset,
    val: Option<Dataset>,
}

impl MlpLandscape {
    pub fn new(arch: Mlp, train: Dataset, val: Option<Dataset>) -> Result<Self> {
        for d in std::iter::once(&train).chain(val.as_ref()) {
            if d.input_dim() != arch.input_dim() || d.classes() != arch.classes() {
                return Err(LabError::invalid(format!(
                    "dataset ({} inputs, {} classes) does not fit layers {:?}",
                    d.input_dim(),
                    d.classes(),
                    arch.layer_sizes()
                )));
            }
        }
        Ok(Self { arch, train, val })
    }

    pub fn arch(&self) -> &Mlp {
        &self.arch
    }

    pub fn train_set(&self) -> &Dataset {
        &self.train
    }

    pub fn val_set(&self) -> Option<&Dataset> {
        self.val.as_ref()
    }

    /// Mean loss and accuracy of `theta` on `data`.
    pub fn evaluate(&self, theta: &[f64], data: &Dataset) -> Evaluation {
        let mut ws = self.arch.workspace();
        let mut loss = 0.0;
        let mut correct = 0usize;
        for n in 0..data.len() {
            self.arch.forward(theta, data.input(n), &mut ws);
            loss += self.arch.example_loss(&ws, data.label(n));
            if argmax(ws.acts.last().unwrap()) == data.label(n) {
                correct += 1;
            }
        }
        Evaluation { loss: loss / data.len() as f64, accuracy: correct as f64 / data.len() as f64 }
    }

    /// Single-example loss `l(θ, x_n)`.
    pub fn example_loss(&self, theta: &[f64], index: usize) -> f64 {
        let mut ws = self.arch.workspace();
        self.arch.forward(theta, self.train.input(index), &mut ws);
        self.arch.example_loss(&ws, self.train.label(index))
    }
}

impl Landscape for MlpLandscape {
    fn kind(&self) -> LandscapeKind {
        LandscapeKind::Mlp
    }

    fn dim(&self) -> usize {
        self.arch.num_params()
    }

    fn num_examples(&self) -> usize {
        self.train.len()
    }

    fn loss_raw(&self, theta: &[f64]) -> f64 {
        let mut ws = self.arch.workspace();
        let mut total = 0.0;
        for n in 0..self.train.len() {
            self.arch.forward(theta, self.train.input(n), &mut ws);
            total += self.arch.example_loss(&ws, self.train.label(n));
        }
        total / self.train.len() as f64
    }

    fn example_grad_into(&self, theta: &[f64], index: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut ws = self.arch.workspace();
        self.arch.forward(theta, self.train.input(index), &mut ws);
        self.arch.backward(theta, self.train.label(index), 1.0, &mut ws, out);
    }

    fn accumulate_example_grads(&self, theta: &[f64], indices: &[usize], out: &mut [f64]) {
        let mut ws = self.arch.workspace();
        for &n in indices {
            self.arch.forward(theta, self.train.input(n), &mut ws);
            self.arch.backward(theta, self.train.label(n), 1.0, &mut ws, out);
        }
    }

    fn train_accuracy(&self, theta: &[f64]) -> Option<f64> {
        Some(self.evaluate(theta, &self.train).accuracy)
    }

    fn validation(&self, theta: &[f64]) -> Option<Evaluation> {
        self.val.as_ref().map(|v| self.evaluate(theta, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::{grad_example, grad_full, loss_at, make_synthetic_dataset, DatasetSpec, Generator};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> (MlpLandscape, ParameterVector) {
        let arch = Mlp::new(vec![3, 5, 4, 3], Activation::Tanh).unwrap();
        let data = make_synthetic_dataset(&DatasetSpec {
            n: 12,
            input_dim: 3,
            classes: 3,
            generator: Generator::GaussianBlobs { spread: 1.0 },
            corrupt_fraction: 0.0,
            seed: 4,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let theta = arch.init_params(&mut rng, 1.5);
        (MlpLandscape::new(arch, data, None).unwrap(), theta)
    }

    #[test]
    fn parameter_count() {
        let arch = Mlp::new(vec![8, 16, 16, 4], Activation::Tanh).unwrap();
        assert_eq!(arch.num_params(), 9 * 16 + 17 * 16 + 17 * 4);
    }

    #[test]
    fn zero_final_layer_gives_log_classes() {
        let (land, mut theta) = tiny();
        let off = land.arch().offsets[2];
        let mut v = theta.clone().into_vec();
        v[off..].iter_mut().for_each(|w| *w = 0.0);
        theta = ParameterVector::new(v).unwrap();
        assert!((loss_at(&land, &theta).unwrap() - 3f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn example_gradients_match_central_differences() {
        let (land, theta) = tiny();
        let h = 1e-5;
        for n in [0, 5, 11] {
            let g = grad_example(&land, &theta, n).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..theta.len() {
                let mut p = theta.clone().into_vec();
                let mut m = p.clone();
                p[i] += h;
                m[i] -= h;
                let fd = (land.example_loss(&p, n) - land.example_loss(&m, n)) / (2.0 * h);
                worst = worst.max((fd - g[i]).abs());
            }
            assert!(worst <= 1e-5 * g.norm().max(1e-3), "worst abs error {worst}");
        }
    }

    #[test]
    fn full_gradient_is_mean_of_example_gradients() {
        let (land, theta) = tiny();
        let full = grad_full(&land, &theta).unwrap();
        let mut mean = vec![0.0; theta.len()];
        for n in 0..land.num_examples() {
            let g = grad_example(&land, &theta, n).unwrap();
            for (m, gi) in mean.iter_mut().zip(g.iter()) {
                *m += gi / land.num_examples() as f64;
            }
        }
        for (a, b) in full.iter().zip(&mean) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert!(grad_example(&land, &theta, 12).is_err());
    }

    #[test]
    fn rejects_mismatched_dataset() {
        let (land, _) = tiny();
        let arch = Mlp::new(vec![4, 3], Activation::Tanh).unwrap();
        assert!(MlpLandscape::new(arch, land.train_set().clone(), None).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn full_gradient_matches_central_differences(seed in 0u64..1000, scale in 0.3f64..2.0) {
            let (land, _) = tiny();
            let theta = land.arch().init_params(&mut ChaCha8Rng::seed_from_u64(seed), scale);
            let g = grad_full(&land, &theta).unwrap();
            let h = 1e-5;
            for i in 0..theta.len() {
                let mut p = theta.clone().into_vec();
                let mut m = p.clone();
                p[i] += h;
                m[i] -= h;
                let fd = (land.loss_raw(&p) - land.loss_raw(&m)) / (2.0 * h);
                proptest::prop_assert!((fd - g[i]).abs() <= 1e-4 * g.norm().max(1e-3), "coord {i}: {fd} vs {}", g[i]);
            }
        }
    }
}
