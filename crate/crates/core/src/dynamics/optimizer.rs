use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::stream_rng;
use crate::error::{LabError, Result};
use crate::landscape::{check_dim, Landscape, ParameterVector};
use crate::noise::{CovarianceFactor, GradientNoiseModel};

/// Mutable state of one SGD trajectory.
///
/// The epoch counter is kept as an integer count of examples consumed, so
/// `e = Σ_k S_k / N` holds exactly whatever the batch-size schedule.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub theta: ParameterVector,
    /// Heavy-ball velocity; stays zero when `μ = 0`.
    pub momentum_buffer: ParameterVector,
    pub step: u64,
    examples_seen: u128,
    num_examples: usize,
    pub rng: ChaCha8Rng,
    grad: Vec<f64>,
}

impl OptimizerState {
    /// Dynamics noise comes from stream 1 of `seed`.
    pub fn new(theta: ParameterVector, num_examples: usize, seed: u64) -> Result<Self> {
        if num_examples == 0 {
            return Err(LabError::invalid("landscape has no examples"));
        }
        let q = theta.len();
        Ok(Self {
            theta,
            momentum_buffer: ParameterVector::zeros(q),
            step: 0,
            examples_seen: 0,
            num_examples,
            rng: stream_rng(seed, 1),
            grad: vec![0.0; q],
        })
    }

    pub fn epoch(&self) -> f64 {
        self.examples_seen as f64 / self.num_examples as f64
    }

    pub fn examples_seen(&self) -> u128 {
        self.examples_seen
    }

    pub fn num_examples(&self) -> usize {
        self.num_examples
    }
}

/// One step `θ' = θ − η ĝ` with `ĝ` drawn from `noise` at batch size
/// `noise.batch_size`.
///
/// With `μ > 0` the heavy-ball form is used: `v' = μ v + ĝ`, `θ' = θ − η v'`.
pub fn sgd_step(
    state: &mut OptimizerState,
    landscape: &dyn Landscape,
    noise: &mut GradientNoiseModel,
    eta: f64,
    momentum: f64,
) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(LabError::invalid(format!("learning rate must be positive, got {eta}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(LabError::invalid(format!("momentum must lie in [0, 1), got {momentum}")));
    }
    check_dim(landscape.dim(), state.theta.len())?;
    let mut grad = std::mem::take(&mut state.grad);
    grad.resize(state.theta.len(), 0.0);
    let sampled = noise.sample_into(landscape, &state.theta, &mut state.rng, &mut grad);
    let result = sampled.and_then(|()| apply_update(state, &grad, eta, momentum, noise.batch_size));
    state.grad = grad;
    result
}

fn apply_update(state: &mut OptimizerState, grad: &[f64], eta: f64, momentum: f64, batch_size: usize) -> Result<()> {
    let theta = state.theta.as_mut_slice();
    if momentum == 0.0 {
        for (t, g) in theta.iter_mut().zip(grad) {
            *t -= eta * g;
        }
    } else {
        let v = state.momentum_buffer.as_mut_slice();
        for ((t, vi), g) in theta.iter_mut().zip(v.iter_mut()).zip(grad) {
            *vi = momentum * *vi + g;
            *t -= eta * *vi;
        }
    }
    state.step += 1;
    state.examples_seen += batch_size as u128;
    if state.theta.iter().any(|v| !v.is_finite()) {
        return Err(LabError::Diverged {
            step: state.step,
            epoch: state.epoch(),
            reason: "non-finite parameters".into(),
        });
    }
    Ok(())
}

/// `θ' = θ − η g(θ) + (η/√S) R ξ` with `ξ ~ N(0, I_q)`.
pub fn euler_maruyama_step<R: Rng + ?Sized>(
    theta: &[f64],
    landscape: &dyn Landscape,
    factor: &CovarianceFactor,
    eta: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<ParameterVector> {
    check_dim(landscape.dim(), theta.len())?;
    check_dim(landscape.dim(), factor.dim())?;
    if !(eta > 0.0) || batch_size == 0 {
        return Err(LabError::invalid("euler_maruyama_step needs η > 0 and S ≥ 1"));
    }
    let mut g = vec![0.0; theta.len()];
    landscape.full_grad_into(theta, &mut g);
    let xi: Vec<f64> = (0..theta.len()).map(|_| rng.sample(StandardNormal)).collect();
    let noise = factor.apply(&xi);
    let scale = eta / (batch_size as f64).sqrt();
    let next: Vec<f64> = theta.iter().zip(&g).zip(&noise).map(|((t, gi), n)| t - eta * gi + scale * n).collect();
    ParameterVector::checked(next, "Euler–Maruyama step")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::{make_train_val, Activation, DatasetSpec, Generator, LandscapeKind, Mlp, MlpLandscape, QuadraticBowl};
    use crate::noise::{factorize_covariance, sample_covariance, CovarianceSource, Sampling};
    use nalgebra::DMatrix;

    struct Linear {
        g: Vec<f64>,
    }

    impl Landscape for Linear {
        fn kind(&self) -> LandscapeKind {
            LandscapeKind::QuadraticBowl
        }
        fn dim(&self) -> usize {
            self.g.len()
        }
        fn num_examples(&self) -> usize {
            1
        }
        fn loss_raw(&self, theta: &[f64]) -> f64 {
            theta.iter().zip(&self.g).map(|(a, b)| a * b).sum()
        }
        fn example_grad_into(&self, _theta: &[f64], _index: usize, out: &mut [f64]) {
            out.copy_from_slice(&self.g);
        }
    }

    fn full_batch() -> GradientNoiseModel {
        GradientNoiseModel::minibatch(1, Sampling::WithoutReplacement)
    }

    #[test]
    fn zero_gradient_leaves_theta() {
        let land = Linear { g: vec![0.0; 3] };
        let mut st = OptimizerState::new(ParameterVector::new(vec![1.0, 2.0, 3.0]).unwrap(), 1, 0).unwrap();
        for eta in [0.1, 10.0] {
            sgd_step(&mut st, &land, &mut full_batch(), eta, 0.0).unwrap();
        }
        assert_eq!(st.theta.as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(st.step, 2);
    }

    #[test]
    fn bowl_hand_step() {
        let bowl = QuadraticBowl::axis_aligned(ParameterVector::zeros(1), vec![1.0]).unwrap();
        let mut st = OptimizerState::new(ParameterVector::new(vec![1.0]).unwrap(), 1, 0).unwrap();
        sgd_step(&mut st, &bowl, &mut full_batch(), 0.1, 0.0).unwrap();
        assert!((st.theta[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn heavy_ball_two_steps() {
        let g = 0.7;
        let eta = 0.05;
        let land = Linear { g: vec![g] };
        let mut st = OptimizerState::new(ParameterVector::zeros(1), 1, 0).unwrap();
        sgd_step(&mut st, &land, &mut full_batch(), eta, 0.9).unwrap();
        let d1 = -st.theta[0];
        sgd_step(&mut st, &land, &mut full_batch(), eta, 0.9).unwrap();
        let d2 = -st.theta[0] - d1;
        assert!((d1 - eta * g).abs() < 1e-15);
        assert!((d2 - eta * 1.9 * g).abs() < 1e-15);
    }

    #[test]
    fn epoch_accounting_is_exact() {
        let land = Linear { g: vec![0.0] };
        let mut st = OptimizerState::new(ParameterVector::zeros(1), 7, 0).unwrap();
        let mut noise = GradientNoiseModel::isotropic(3, 1.0);
        for s in [3usize, 5, 6] {
            noise.batch_size = s;
            sgd_step(&mut st, &land, &mut noise, 0.1, 0.0).unwrap();
        }
        assert_eq!(st.examples_seen(), 14);
        assert_eq!(st.epoch(), 2.0);
    }

    #[test]
    fn divergence_reports_step() {
        let land = Linear { g: vec![f64::MAX] };
        let mut st = OptimizerState::new(ParameterVector::new(vec![-f64::MAX]).unwrap(), 1, 0).unwrap();
        match sgd_step(&mut st, &land, &mut full_batch(), 10.0, 0.0) {
            Err(LabError::Diverged { step, .. }) => assert_eq!(step, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let land = Linear { g: vec![0.0] };
        let mut st = OptimizerState::new(ParameterVector::zeros(1), 1, 0).unwrap();
        assert!(sgd_step(&mut st, &land, &mut full_batch(), 0.0, 0.0).is_err());
        assert!(sgd_step(&mut st, &land, &mut full_batch(), 0.1, 1.0).is_err());
    }

    #[test]
    fn zero_factor_is_gradient_descent() {
        let bowl = QuadraticBowl::axis_aligned(ParameterVector::zeros(2), vec![1.0, 2.0]).unwrap();
        let mut rng = stream_rng(0, 1);
        let next = euler_maruyama_step(&[1.0, 1.0], &bowl, &CovarianceFactor::zero(2), 0.1, 4, &mut rng).unwrap();
        assert!((next[0] - 0.8).abs() < 1e-15 && (next[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn em_increment_variance() {
        let land = Linear { g: vec![0.0] };
        let factor = factorize_covariance(&DMatrix::identity(1, 1)).unwrap();
        let (eta, s) = (0.3, 5);
        let mut rng = stream_rng(3, 1);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| euler_maruyama_step(&[0.0], &land, &factor, eta, s, &mut rng).unwrap()[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expect = eta * eta / s as f64;
        assert!((var / expect - 1.0).abs() < 0.03, "{var} vs {expect}");
    }

    #[test]
    fn em_matches_minibatch_moments() {
        let spec = DatasetSpec {
            n: 40,
            input_dim: 2,
            classes: 2,
            generator: Generator::Teacher { hidden: vec![4], temperature: 1.0, weight_scale: 2.0 },
            corrupt_fraction: 0.0,
            seed: 5,
        };
        let (train, _) = make_train_val(&spec, 1).unwrap();
        let arch = Mlp::new(vec![2, 3, 2], Activation::Tanh).unwrap();
        let theta = arch.init_params(&mut stream_rng(5, 0), 1.0);
        let land = MlpLandscape::new(arch, train, None).unwrap();
        let (eta, s, draws) = (0.5, 4, 10_000);
        let q = land.dim();

        // Minibatch SGD with replacement has covariance K/S, matching C = K in the SDE.
        let k = sample_covariance(&land, &theta).unwrap();
        let k_pop = &k.matrix * ((land.num_examples() - 1) as f64 / land.num_examples() as f64);
        let factor = factorize_covariance(&k_pop).unwrap();

        let mut sgd = Vec::with_capacity(draws);
        let mut noise = GradientNoiseModel::minibatch(s, Sampling::WithReplacement);
        for i in 0..draws {
            let mut st = OptimizerState::new(theta.clone(), land.num_examples(), 100 + i as u64).unwrap();
            sgd_step(&mut st, &land, &mut noise, eta, 0.0).unwrap();
            sgd.push(st.theta.iter().zip(theta.iter()).map(|(a, b)| a - b).collect::<Vec<_>>());
        }
        let mut rng = stream_rng(7, 1);
        let em: Vec<Vec<f64>> = (0..draws)
            .map(|_| {
                let next = euler_maruyama_step(&theta, &land, &factor, eta, s, &mut rng).unwrap();
                next.iter().zip(theta.iter()).map(|(a, b)| a - b).collect()
            })
            .collect();

        let moments = |xs: &[Vec<f64>]| {
            let n = xs.len() as f64;
            let mean: Vec<f64> = (0..q).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n).collect();
            let cov = DMatrix::from_fn(q, q, |a, b| xs.iter().map(|x| (x[a] - mean[a]) * (x[b] - mean[b])).sum::<f64>() / (n - 1.0));
            (mean, cov)
        };
        let (m1, c1) = moments(&sgd);
        let (m2, c2) = moments(&em);
        let mn = m2.iter().map(|x| x * x).sum::<f64>().sqrt();
        let dm = m1.iter().zip(&m2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dm <= 0.1 * mn, "mean mismatch {dm} vs {mn}");
        assert!((&c1 - &c2).norm() <= 0.1 * c2.norm(), "cov mismatch {}", (&c1 - &c2).norm() / c2.norm());
    }

    #[test]
    fn surrogate_step_uses_fixed_factor() {
        let bowl = QuadraticBowl::axis_aligned(ParameterVector::zeros(2), vec![1.0, 2.0]).unwrap();
        let factor = factorize_covariance(&bowl.hessian()).unwrap();
        let mut noise = GradientNoiseModel::surrogate(10, CovarianceSource::Fixed(factor.clone()));
        let mut a = OptimizerState::new(ParameterVector::new(vec![1.0, 1.0]).unwrap(), 1, 9).unwrap();
        sgd_step(&mut a, &bowl, &mut noise, 0.01, 0.0).unwrap();
        let mut rng = stream_rng(9, 1);
        let b = euler_maruyama_step(&[1.0, 1.0], &bowl, &factor, 0.01, 10, &mut rng).unwrap();
        // Same ξ enters with opposite sign; the drift parts agree.
        let drift = [1.0 - 0.01 * 2.0, 1.0 - 0.01 * 4.0];
        for ((x, y), d) in a.theta.iter().zip(b.iter()).zip(drift) {
            assert!((x + y - 2.0 * d).abs() < 1e-15);
        }
    }
}
