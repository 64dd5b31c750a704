//! Minimum-width measurements from Hessian-vector products.
//!
//! Every estimator here works through [`HvpEngine`], which either multiplies
//! by the analytic Hessian or takes a central finite difference of the full
//! gradient along the unit direction.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LabError, Result};
use crate::landscape::{check_dim, norm, Landscape, ParameterVector};
use crate::noise::sample_covariance;

/// Default cost guard for [`dense_hessian`].
pub const DENSE_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HvpMode {
    Analytic,
    FiniteDifference,
}

impl HvpMode {
    pub fn as_str(self) -> &'static str {
        match self {
            HvpMode::Analytic => "analytic",
            HvpMode::FiniteDifference => "grad-finite-difference",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "analytic" => Some(HvpMode::Analytic),
            "grad-finite-difference" | "fd" => Some(HvpMode::FiniteDifference),
            _ => None,
        }
    }
}

/// FD step along the unit direction is `rel_step · (1 + |θ|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HvpEngine {
    pub mode: HvpMode,
    pub rel_step: f64,
}

impl Default for HvpEngine {
    fn default() -> Self {
        Self::finite_difference()
    }
}

impl HvpEngine {
    pub fn analytic() -> Self {
        Self { mode: HvpMode::Analytic, rel_step: 1e-4 }
    }

    pub fn finite_difference() -> Self {
        Self { mode: HvpMode::FiniteDifference, rel_step: 1e-4 }
    }

    /// Analytic when the landscape provides a Hessian, FD otherwise.
    pub fn best_for(landscape: &dyn Landscape, theta: &[f64]) -> Self {
        if landscape.analytic_hessian(theta).is_some() {
            Self::analytic()
        } else {
            Self::finite_difference()
        }
    }

    /// Binds the engine to a point so repeated products share setup work.
    pub fn at<'a>(&self, landscape: &'a dyn Landscape, theta: &[f64]) -> Result<HvpOperator<'a>> {
        check_dim(landscape.dim(), theta.len())?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(LabError::non_finite("probe point"));
        }
        let inner = match self.mode {
            HvpMode::Analytic => match landscape.analytic_hessian(theta) {
                Some(h) => Inner::Dense(h),
                None => return Err(LabError::Unsupported { op: "analytic Hessian-vector product", kind: landscape.kind() }),
            },
            HvpMode::FiniteDifference => {
                let eps = self.rel_step * (1.0 + norm(theta));
                if !(eps > 0.0) {
                    return Err(LabError::invalid("finite-difference step must be positive"));
                }
                Inner::Fd { landscape, theta: theta.to_vec(), eps }
            }
        };
        Ok(HvpOperator { inner, dim: landscape.dim() })
    }
}

enum Inner<'a> {
    Dense(DMatrix<f64>),
    Fd { landscape: &'a dyn Landscape, theta: Vec<f64>, eps: f64 },
}

/// `v ↦ H(θ) v` at a fixed point.
pub struct HvpOperator<'a> {
    inner: Inner<'a>,
    dim: usize,
}

impl HvpOperator<'_> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes `H v` into `out`. A zero `v` gives zero.
    pub fn apply_into(&self, v: &[f64], out: &mut [f64]) {
        match &self.inner {
            Inner::Dense(h) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = h.row(i).iter().zip(v).map(|(a, b)| a * b).sum();
                }
            }
            Inner::Fd { landscape, theta, eps } => {
                let vn = norm(v);
                if vn == 0.0 {
                    out.iter_mut().for_each(|o| *o = 0.0);
                    return;
                }
                let step = eps / vn;
                let plus: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t + step * d).collect();
                let minus: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t - step * d).collect();
                let mut gm = vec![0.0; self.dim];
                landscape.full_grad_into(&plus, out);
                landscape.full_grad_into(&minus, &mut gm);
                let scale = vn / (2.0 * eps);
                for (o, m) in out.iter_mut().zip(&gm) {
                    *o = (*o - m) * scale;
                }
            }
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.apply_into(v, &mut out);
        out
    }

    /// Products for many vectors; parallel when the feature is on, results in input order.
    fn apply_many(&self, vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            vs.par_iter().map(|v| self.apply(v)).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            vs.iter().map(|v| self.apply(v)).collect()
        }
    }
}

pub fn hessian_vector_product(
    engine: &HvpEngine,
    landscape: &dyn Landscape,
    theta: &[f64],
    v: &[f64],
) -> Result<ParameterVector> {
    check_dim(landscape.dim(), v.len())?;
    if !(norm(v) > 0.0) {
        return Err(LabError::invalid("Hessian-vector product needs a non-zero direction"));
    }
    let out = engine.at(landscape, theta)?.apply(v);
    ParameterVector::checked(out, "Hessian-vector product")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerIterationResult {
    /// Eigenvalue of largest magnitude, with its sign.
    pub lambda_max: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration on the Rayleigh quotient. Converged when successive
/// quotients differ by at most `tol` relative, or when the eigen-residual
/// `|Hv − ρv|` falls below `tol·|ρ|`. For indefinite Hessians this returns
/// the magnitude-dominant eigenvalue, which may be negative.
pub fn power_iteration_lambda_max<R: Rng + ?Sized>(
    engine: &HvpEngine,
    landscape: &dyn Landscape,
    theta: &[f64],
    max_iters: usize,
    tol: f64,
    rng: &mut R,
) -> Result<PowerIterationResult> {
    if max_iters == 0 {
        return Err(LabError::invalid("max_iters must be at least 1"));
    }
    let op = engine.at(landscape, theta)?;
    power_iteration(&op, max_iters, tol, rng)
}

fn power_iteration<R: Rng + ?Sized>(op: &HvpOperator<'_>, max_iters: usize, tol: f64, rng: &mut R) -> Result<PowerIterationResult> {
    let q = op.dim();
    let mut v: Vec<f64> = (0..q).map(|_| rng.sample(StandardNormal)).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut w = vec![0.0; q];
    let mut prev = f64::NAN;
    for it in 1..=max_iters {
        op.apply_into(&v, &mut w);
        if w.iter().any(|x| !x.is_finite()) {
            return Err(LabError::non_finite("power iteration"));
        }
        let rq: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let wn = norm(&w);
        if wn == 0.0 {
            return Ok(PowerIterationResult { lambda_max: 0.0, iterations: it, converged: true });
        }
        let residual = v.iter().zip(&w).map(|(a, b)| (b - rq * a).powi(2)).sum::<f64>().sqrt();
        let rel_change = (rq - prev).abs() / rq.abs().max(f64::MIN_POSITIVE);
        if residual <= tol * rq.abs() || rel_change <= tol {
            return Ok(PowerIterationResult { lambda_max: rq, iterations: it, converged: true });
        }
        prev = rq;
        for (a, b) in v.iter_mut().zip(&w) {
            *a = b / wn;
        }
    }
    Ok(PowerIterationResult { lambda_max: prev, iterations: max_iters, converged: false })
}

/// Mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub probes: usize,
}

fn mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Hutchinson estimate `mean vᵀHv` over Rademacher probes.
pub fn hutchinson_trace<R: Rng + ?Sized>(
    engine: &HvpEngine,
    landscape: &dyn Landscape,
    theta: &[f64],
    n_probes: usize,
    rng: &mut R,
) -> Result<Estimate> {
    let op = engine.at(landscape, theta)?;
    trace_estimate(&op, n_probes, rng)
}

fn trace_estimate<R: Rng + ?Sized>(op: &HvpOperator<'_>, n_probes: usize, rng: &mut R) -> Result<Estimate> {
    if n_probes == 0 {
        return Err(LabError::invalid("n_probes must be at least 1"));
    }
    let q = op.dim();
    let probes: Vec<Vec<f64>> =
        (0..n_probes).map(|_| (0..q).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()).collect();
    let products = op.apply_many(&probes);
    let samples: Vec<f64> =
        probes.iter().zip(&products).map(|(v, hv)| v.iter().zip(hv).map(|(a, b)| a * b).sum()).collect();
    let (value, std_error) = mean_se(&samples);
    if !value.is_finite() {
        return Err(LabError::non_finite("trace estimate"));
    }
    Ok(Estimate { value, std_error, probes: n_probes })
}

/// `sqrt(mean |Hv|²)` over standard-normal probes, since `E|Hv|² = ‖H‖_F²`.
/// The standard error comes from the delta method.
pub fn frobenius_norm_estimate<R: Rng + ?Sized>(
    engine: &HvpEngine,
    landscape: &dyn Landscape,
    theta: &[f64],
    n_probes: usize,
    rng: &mut R,
) -> Result<Estimate> {
    let op = engine.at(landscape, theta)?;
    frobenius_estimate(&op, n_probes, rng)
}

fn frobenius_estimate<R: Rng + ?Sized>(op: &HvpOperator<'_>, n_probes: usize, rng: &mut R) -> Result<Estimate> {
    if n_probes == 0 {
        return Err(LabError::invalid("n_probes must be at least 1"));
    }
    let q = op.dim();
    let probes: Vec<Vec<f64>> = (0..n_probes).map(|_| (0..q).map(|_| rng.sample(StandardNormal)).collect()).collect();
    let samples: Vec<f64> = op.apply_many(&probes).iter().map(|hv| hv.iter().map(|x| x * x).sum()).collect();
    let (m, se_m) = mean_se(&samples);
    if !m.is_finite() {
        return Err(LabError::non_finite("Frobenius estimate"));
    }
    let value = m.sqrt();
    let std_error = if value > 0.0 { se_m / (2.0 * value) } else { 0.0 };
    Ok(Estimate { value, std_error, probes: n_probes })
}

/// Probe settings shared by trajectories and experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeSettings {
    pub engine: HvpEngine,
    pub power_iters: usize,
    pub power_tol: f64,
    pub trace_probes: usize,
    pub frob_probes: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { engine: HvpEngine::finite_difference(), power_iters: 200, power_tol: 1e-6, trace_probes: 200, frob_probes: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub lambda_max: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: f64,
    pub trace_se: f64,
    pub frobenius: f64,
    pub frobenius_se: f64,
    pub probes_used: usize,
    pub q: usize,
}

impl SpectralEstimate {
    /// `‖H‖_F / q`, the per-parameter normalisation used in schedule tables.
    pub fn frobenius_per_param(&self) -> f64 {
        self.frobenius / self.q as f64
    }
}

/// All three width measures at one point. If the landscape has an analytic
/// Hessian and the settings ask for FD, FD is still used.
pub fn spectral_probe<R: Rng + ?Sized>(
    settings: &ProbeSettings,
    landscape: &dyn Landscape,
    theta: &[f64],
    rng: &mut R,
) -> Result<SpectralEstimate> {
    let op = settings.engine.at(landscape, theta)?;
    let power = power_iteration(&op, settings.power_iters.max(1), settings.power_tol, rng)?;
    let trace = trace_estimate(&op, settings.trace_probes, rng)?;
    let frob = frobenius_estimate(&op, settings.frob_probes, rng)?;
    Ok(SpectralEstimate {
        lambda_max: power.lambda_max,
        iterations: power.iterations,
        converged: power.converged,
        trace: trace.value,
        trace_se: trace.std_error,
        frobenius: frob.value,
        frobenius_se: frob.std_error,
        probes_used: trace.probes + frob.probes,
        q: op.dim(),
    })
}

pub const PROBE_CSV_HEADER: &str = "epoch,lambda_max,lambda_iters,trace,trace_se,frob,frob_se,q";

/// Probe CSV with one row per `(epoch, estimate)`.
pub fn probe_csv(rows: &[(f64, SpectralEstimate)]) -> String {
    let mut s = String::from(PROBE_CSV_HEADER);
    s.push('\n');
    for (epoch, e) in rows {
        writeln!(
            s,
            "{epoch},{},{},{},{},{},{},{}",
            e.lambda_max, e.iterations, e.trace, e.trace_se, e.frobenius, e.frobenius_se, e.q
        )
        .unwrap();
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseHessian {
    /// `(H + Hᵀ)/2`.
    pub matrix: DMatrix<f64>,
    /// `‖H − Hᵀ‖_F / ‖H‖_F` before symmetrisation (0 for a zero matrix).
    pub asymmetry: f64,
}

/// Column `j` is `H e_j`. Refuses `q > limit`.
pub fn dense_hessian(engine: &HvpEngine, landscape: &dyn Landscape, theta: &[f64], limit: usize) -> Result<DenseHessian> {
    let q = landscape.dim();
    if q > limit {
        return Err(LabError::TooLarge { dim: q, limit });
    }
    let op = engine.at(landscape, theta)?;
    let basis: Vec<Vec<f64>> = (0..q)
        .map(|j| {
            let mut e = vec![0.0; q];
            e[j] = 1.0;
            e
        })
        .collect();
    let cols = op.apply_many(&basis);
    let raw = DMatrix::from_fn(q, q, |i, j| cols[j][i]);
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(LabError::non_finite("dense Hessian"));
    }
    let fro = raw.norm();
    let asymmetry = if fro > 0.0 { (&raw - raw.transpose()).norm() / fro } else { 0.0 };
    let matrix = (&raw + raw.transpose()) * 0.5;
    Ok(DenseHessian { matrix, asymmetry })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceHessianDistance {
    /// `‖K − H‖_F / ‖H‖_F`.
    pub rel_frobenius: f64,
    /// `Tr(K) / Tr(H)`.
    pub trace_ratio: f64,
}

/// Distance between a gradient covariance and a Hessian of the same size.
pub fn matrix_distance(k: &DMatrix<f64>, h: &DMatrix<f64>) -> Result<CovarianceHessianDistance> {
    if k.shape() != h.shape() {
        return Err(LabError::DimensionMismatch { expected: h.nrows(), got: k.nrows() });
    }
    let hn = h.norm();
    if !(hn > 0.0) {
        return Err(LabError::invalid("Hessian has zero Frobenius norm"));
    }
    Ok(CovarianceHessianDistance { rel_frobenius: (k - h).norm() / hn, trace_ratio: k.trace() / h.trace() })
}

/// Compares the sample covariance `K(θ)` with the dense Hessian `H(θ)`.
pub fn covariance_hessian_distance(
    engine: &HvpEngine,
    landscape: &dyn Landscape,
    theta: &[f64],
) -> Result<CovarianceHessianDistance> {
    let h = dense_hessian(engine, landscape, theta, DENSE_LIMIT)?;
    let k = sample_covariance(landscape, theta)?;
    matrix_distance(&k.matrix, &h.matrix)
}
