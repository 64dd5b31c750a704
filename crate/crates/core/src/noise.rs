//! Stochastic gradients and gradient covariance objects.
//!
//! * minibatch estimator `g^(S)(θ) = (1/S) Σ_{n∈B} g_n(θ)`
//! * sample covariance `K = 1/(N−1) Σ (g_n − g)(g_n − g)ᵀ`
//! * finite-dataset minibatch covariance `Σ = (1/S − 1/N) K`
//! * factor `R = U D^{1/2}` with `R Rᵀ = C`
//! * empirical Fisher `(1/N) Σ g_n g_nᵀ`

use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LabError, Result};
use crate::landscape::{check_dim, Landscape, ParameterVector};

/// Eigenvalues between this and zero are clamped; below it the matrix is rejected.
pub const PSD_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    WithReplacement,
    /// Distinct indices within a batch; batches are drawn independently per step.
    WithoutReplacement,
}

impl Sampling {
    pub fn as_str(self) -> &'static str {
        match self {
            Sampling::WithReplacement => "with-replacement",
            Sampling::WithoutReplacement => "without-replacement",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "with-replacement" => Some(Sampling::WithReplacement),
            "without-replacement" => Some(Sampling::WithoutReplacement),
            _ => None,
        }
    }
}

/// Where the Gaussian surrogate takes its covariance `C(θ)` from.
#[derive(Debug, Clone)]
pub enum CovarianceSource {
    /// A fixed factor, e.g. of an analytic Hessian.
    Fixed(CovarianceFactor),
    /// The sample covariance `K(θ)`, re-estimated every `refresh_interval`
    /// draws and frozen in between.
    SampleCovariance { refresh_interval: u64 },
}

#[derive(Debug, Clone)]
pub enum NoiseKind {
    Minibatch { sampling: Sampling },
    GaussianSurrogate { source: CovarianceSource },
    /// `C = σ² I`.
    Isotropic { sigma2: f64 },
}

/// Source of stochastic gradients. Holds per-trajectory state (the cached
/// surrogate factor), so one instance must not be shared between trajectories.
#[derive(Debug, Clone)]
pub struct GradientNoiseModel {
    pub kind: NoiseKind,
    pub batch_size: usize,
    cached: Option<CovarianceFactor>,
    draws: u64,
}

impl GradientNoiseModel {
    pub fn minibatch(batch_size: usize, sampling: Sampling) -> Self {
        Self::with_kind(NoiseKind::Minibatch { sampling }, batch_size)
    }

    pub fn isotropic(batch_size: usize, sigma2: f64) -> Self {
        Self::with_kind(NoiseKind::Isotropic { sigma2 }, batch_size)
    }

    pub fn surrogate(batch_size: usize, source: CovarianceSource) -> Self {
        Self::with_kind(NoiseKind::GaussianSurrogate { source }, batch_size)
    }

    pub fn with_kind(kind: NoiseKind, batch_size: usize) -> Self {
        Self { kind, batch_size, cached: None, draws: 0 }
    }

    /// Whether this model samples real minibatches of the dataset.
    pub fn is_minibatch(&self) -> bool {
        matches!(self.kind, NoiseKind::Minibatch { .. })
    }

    fn validate(&self, landscape: &dyn Landscape) -> Result<()> {
        if self.batch_size == 0 {
            return Err(LabError::invalid("batch size must be at least 1"));
        }
        match &self.kind {
            NoiseKind::Minibatch { .. } if self.batch_size > landscape.num_examples() => Err(LabError::invalid(format!(
                "batch size {} exceeds dataset size {}",
                self.batch_size,
                landscape.num_examples()
            ))),
            NoiseKind::Isotropic { sigma2 } if !(*sigma2 > 0.0) => Err(LabError::invalid("sigma2 must be positive")),
            NoiseKind::GaussianSurrogate { source: CovarianceSource::Fixed(f) } if f.dim() != landscape.dim() => {
                Err(LabError::DimensionMismatch { expected: landscape.dim(), got: f.dim() })
            }
            NoiseKind::GaussianSurrogate { source: CovarianceSource::SampleCovariance { refresh_interval: 0 } } => {
                Err(LabError::invalid("refresh interval must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    /// Writes one stochastic gradient at `theta` into `out`.
    pub fn sample_into<R: Rng + ?Sized>(
        &mut self,
        landscape: &dyn Landscape,
        theta: &[f64],
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<()> {
        self.validate(landscape)?;
        check_dim(landscape.dim(), theta.len())?;
        let s = self.batch_size;
        match &self.kind {
            NoiseKind::Minibatch { sampling } => {
                let indices = draw_batch(landscape.num_examples(), s, *sampling, rng);
                out.iter_mut().for_each(|o| *o = 0.0);
                landscape.accumulate_example_grads(theta, &indices, out);
                let inv = 1.0 / s as f64;
                out.iter_mut().for_each(|o| *o *= inv);
            }
            NoiseKind::Isotropic { sigma2 } => {
                landscape.full_grad_into(theta, out);
                let scale = (sigma2 / s as f64).sqrt();
                for o in out.iter_mut() {
                    *o += scale * rng.sample::<f64, _>(StandardNormal);
                }
            }
            NoiseKind::GaussianSurrogate { source } => {
                let factor = match source {
                    CovarianceSource::Fixed(f) => f,
                    CovarianceSource::SampleCovariance { refresh_interval } => {
                        if self.cached.is_none() || self.draws % refresh_interval == 0 {
                            let k = sample_covariance(landscape, theta)?;
                            self.cached = Some(factorize_covariance(&k.matrix)?);
                        }
                        self.cached.as_ref().unwrap()
                    }
                };
                landscape.full_grad_into(theta, out);
                let xi: Vec<f64> = (0..factor.dim()).map(|_| rng.sample(StandardNormal)).collect();
                let noise = factor.apply(&xi);
                let scale = 1.0 / (s as f64).sqrt();
                for (o, n) in out.iter_mut().zip(&noise) {
                    *o += scale * n;
                }
            }
        }
        self.draws += 1;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(LabError::non_finite("stochastic gradient"));
        }
        Ok(())
    }
}

/// Sorted minibatch indices; sorting fixes the summation order.
pub fn draw_batch<R: Rng + ?Sized>(n: usize, s: usize, sampling: Sampling, rng: &mut R) -> Vec<usize> {
    let mut idx = match sampling {
        Sampling::WithoutReplacement => index::sample(rng, n, s).into_vec(),
        Sampling::WithReplacement => (0..s).map(|_| rng.random_range(0..n)).collect(),
    };
    idx.sort_unstable();
    idx
}

/// One minibatch gradient `g^(S)(θ)`.
pub fn minibatch_gradient<R: Rng + ?Sized>(
    landscape: &dyn Landscape,
    theta: &[f64],
    model: &GradientNoiseModel,
    rng: &mut R,
) -> Result<ParameterVector> {
    if !model.is_minibatch() {
        return Err(LabError::invalid("minibatch_gradient needs a minibatch noise model"));
    }
    let mut m = model.clone();
    let mut out = vec![0.0; landscape.dim()];
    m.sample_into(landscape, theta, rng, &mut out)?;
    Ok(ParameterVector::from_vec_unchecked(out))
}

/// Sample covariance of per-example gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub matrix: DMatrix<f64>,
    pub n_samples: usize,
    pub centered: bool,
}

impl CovarianceEstimate {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// CSV dump: header `# q=<int> centered=<bool> n=<int>`, then one row per line.
    pub fn to_csv(&self) -> String {
        let q = self.dim();
        let mut s = format!("# q={q} centered={} n={}\n", self.centered, self.n_samples);
        for i in 0..q {
            for j in 0..q {
                if j > 0 {
                    s.push(',');
                }
                write!(s, "{}", self.matrix[(i, j)]).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Per-example gradients as rows of an `N × q` matrix.
pub fn per_example_gradients(landscape: &dyn Landscape, theta: &[f64]) -> Result<DMatrix<f64>> {
    check_dim(landscape.dim(), theta.len())?;
    let (n, q) = (landscape.num_examples(), landscape.dim());
    let rows = per_example_rows(landscape, theta, n, q);
    if rows.iter().any(|v| !v.is_finite()) {
        return Err(LabError::non_finite("per-example gradients"));
    }
    Ok(DMatrix::from_row_slice(n, q, &rows))
}

#[cfg(feature = "parallel")]
fn per_example_rows(landscape: &dyn Landscape, theta: &[f64], n: usize, q: usize) -> Vec<f64> {
    use rayon::prelude::*;
    let mut rows = vec![0.0; n * q];
    rows.par_chunks_mut(q).enumerate().for_each(|(i, row)| landscape.example_grad_into(theta, i, row));
    rows
}

#[cfg(not(feature = "parallel"))]
fn per_example_rows(landscape: &dyn Landscape, theta: &[f64], n: usize, q: usize) -> Vec<f64> {
    let mut rows = vec![0.0; n * q];
    for (i, row) in rows.chunks_mut(q).enumerate() {
        landscape.example_grad_into(theta, i, row);
    }
    rows
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `K(θ) = 1/(N−1) Σ_n (g_n − g)(g_n − g)ᵀ`.
pub fn sample_covariance(landscape: &dyn Landscape, theta: &[f64]) -> Result<CovarianceEstimate> {
    let n = landscape.num_examples();
    if n < 2 {
        return Err(LabError::invalid(format!("sample covariance needs N >= 2, landscape has N = {n}")));
    }
    let g = per_example_gradients(landscape, theta)?;
    Ok(CovarianceEstimate { matrix: covariance_of_rows(&g), n_samples: n, centered: true })
}

/// Centered covariance (denominator `rows − 1`) of the rows of `g`.
pub fn covariance_of_rows(g: &DMatrix<f64>) -> DMatrix<f64> {
    let n = g.nrows();
    let mean = g.row_mean();
    let mut centered = g.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    symmetrize(centered.tr_mul(&centered) / (n as f64 - 1.0))
}

/// `Σ = (1/S − 1/N) K`.
pub fn noise_covariance(k: &CovarianceEstimate, batch_size: usize, n: usize) -> Result<DMatrix<f64>> {
    if batch_size == 0 || batch_size > n {
        return Err(LabError::invalid(format!("need 1 <= S <= N, got S = {batch_size}, N = {n}")));
    }
    Ok(&k.matrix * (1.0 / batch_size as f64 - 1.0 / n as f64))
}

/// `(1/N) Σ_n g_n g_nᵀ` (uncentered).
pub fn empirical_fisher(landscape: &dyn Landscape, theta: &[f64]) -> Result<DMatrix<f64>> {
    let g = per_example_gradients(landscape, theta)?;
    let n = g.nrows() as f64;
    Ok(symmetrize(g.tr_mul(&g) / n))
}

/// `R = U D^{1/2}` for a symmetric PSD `C = U D Uᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceFactor {
    pub r: DMatrix<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// Eigenvalues after clamping tiny negatives to zero.
    pub eigenvalues: DVector<f64>,
}

impl CovarianceFactor {
    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    /// `R ξ`.
    pub fn apply(&self, xi: &[f64]) -> Vec<f64> {
        let q = self.dim();
        let mut out = vec![0.0; q];
        for j in 0..q {
            let x = xi[j];
            if x == 0.0 {
                continue;
            }
            for (o, r) in out.iter_mut().zip(self.r.column(j).iter()) {
                *o += r * x;
            }
        }
        out
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.r * self.r.transpose()
    }

    /// Factor of the zero matrix.
    pub fn zero(q: usize) -> Self {
        Self { r: DMatrix::zeros(q, q), eigenvectors: DMatrix::identity(q, q), eigenvalues: DVector::zeros(q) }
    }
}

pub fn factorize_covariance(c: &DMatrix<f64>) -> Result<CovarianceFactor> {
    let q = c.nrows();
    if c.ncols() != q {
        return Err(LabError::invalid(format!("covariance must be square, got {}x{}", q, c.ncols())));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(LabError::non_finite("covariance matrix"));
    }
    let scale = c.amax().max(f64::MIN_POSITIVE);
    let asym = (c - c.transpose()).amax();
    if asym > 1e-8 * scale {
        return Err(LabError::invalid(format!("covariance is not symmetric (asymmetry {asym:e})")));
    }
    let eig = SymmetricEigen::new(symmetrize(c.clone()));
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE {
        return Err(LabError::NotPsd(min));
    }
    let eigenvalues = eig.eigenvalues.map(|l| l.max(0.0));
    let mut r = eig.eigenvectors.clone();
    for (j, mut col) in r.column_iter_mut().enumerate() {
        col *= eigenvalues[j].sqrt();
    }
    Ok(CovarianceFactor { r, eigenvectors: eig.eigenvectors, eigenvalues })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::landscape::{grad_full, Landscape, LandscapeKind};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Landscape whose per-example gradients are fixed vectors.
    struct FixedGrads(Vec<Vec<f64>>);

    impl Landscape for FixedGrads {
        fn kind(&self) -> LandscapeKind {
            LandscapeKind::Mlp
        }
        fn dim(&self) -> usize {
            self.0[0].len()
        }
        fn num_examples(&self) -> usize {
            self.0.len()
        }
        fn loss_raw(&self, _theta: &[f64]) -> f64 {
            0.0
        }
        fn example_grad_into(&self, _theta: &[f64], index: usize, out: &mut [f64]) {
            out.copy_from_slice(&self.0[index]);
        }
    }

    fn random_grads(n: usize, q: usize, seed: u64) -> FixedGrads {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FixedGrads((0..n).map(|_| (0..q).map(|_| rng.sample(StandardNormal)).collect()).collect())
    }

    /// Independent outer-product accumulation of `K`.
    fn brute_force_k(grads: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = grads.len();
        let q = grads[0].len();
        let mean: Vec<f64> = (0..q).map(|j| grads.iter().map(|g| g[j]).sum::<f64>() / n as f64).collect();
        let mut k = vec![vec![0.0; q]; q];
        for g in grads {
            for a in 0..q {
                for b in 0..q {
                    k[a][b] += (g[a] - mean[a]) * (g[b] - mean[b]) / (n as f64 - 1.0);
                }
            }
        }
        k
    }

    #[test]
    fn two_example_covariance_by_hand() {
        let land = FixedGrads(vec![vec![1.0, 0.0], vec![-1.0, 0.0]]);
        let k = sample_covariance(&land, &[0.0, 0.0]).unwrap();
        assert_eq!(k.matrix, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
        assert!(k.centered);
        let f = empirical_fisher(&land, &[0.0, 0.0]).unwrap();
        assert_eq!(f, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn identical_gradients_have_zero_covariance() {
        let land = FixedGrads(vec![vec![0.3, -2.0, 1.0]; 4]);
        let k = sample_covariance(&land, &[0.0; 3]).unwrap();
        assert!(k.matrix.amax() < 1e-15);
    }

    #[test]
    fn covariance_matches_brute_force() {
        let land = random_grads(5, 3, 7);
        let k = sample_covariance(&land, &[0.0; 3]).unwrap();
        let oracle = brute_force_k(&land.0);
        for a in 0..3 {
            for b in 0..3 {
                assert!((k.matrix[(a, b)] - oracle[a][b]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn single_example_covariance_is_an_error() {
        let land = FixedGrads(vec![vec![1.0]]);
        assert!(sample_covariance(&land, &[0.0]).is_err());
    }

    #[test]
    fn fisher_centering_identity() {
        let land = random_grads(9, 4, 3);
        let theta = [0.0; 4];
        let k = sample_covariance(&land, &theta).unwrap().matrix;
        let f = empirical_fisher(&land, &theta).unwrap();
        let g = DVector::from_vec(grad_full(&land, &theta).unwrap().into_vec());
        let n = 9.0;
        let rebuilt = k * ((n - 1.0) / n) + &g * g.transpose();
        assert!((f - rebuilt).amax() <= 1e-12);
    }

    #[test]
    fn fisher_at_zero_mean_is_scaled_covariance() {
        let land = FixedGrads(vec![vec![1.0, 2.0], vec![-1.0, -2.0], vec![0.5, 0.0], vec![-0.5, 0.0]]);
        let k = sample_covariance(&land, &[0.0; 2]).unwrap().matrix;
        let f = empirical_fisher(&land, &[0.0; 2]).unwrap();
        assert!((f - k * 0.75).amax() <= 1e-15);
    }

    #[test]
    fn noise_covariance_limits() {
        let land = random_grads(6, 3, 1);
        let k = sample_covariance(&land, &[0.0; 3]).unwrap();
        assert_eq!(noise_covariance(&k, 6, 6).unwrap().amax(), 0.0);
        assert!(noise_covariance(&k, 7, 6).is_err());
        let big_n = 1_000_000;
        let sigma = noise_covariance(&k, 10, big_n).unwrap();
        let approx = &k.matrix / 10.0;
        assert!((sigma - &approx).amax() <= 1e-4 * approx.amax());
    }

    #[test]
    fn factor_identity_and_diagonal() {
        let f = factorize_covariance(&DMatrix::identity(3, 3)).unwrap();
        assert!((f.reconstruct() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-14);
        let d = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let f = factorize_covariance(&d).unwrap();
        assert!((f.reconstruct() - &d).amax() < 1e-13);
        let mut norms: Vec<f64> = f.r.column_iter().map(|c| c.norm()).collect();
        norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((norms[0] - 2.0).abs() < 1e-14 && (norms[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn factor_rejects_indefinite_and_clamps_tiny_negatives() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-3]);
        assert!(matches!(factorize_covariance(&bad), Err(LabError::NotPsd(_))));
        let tiny = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-9]);
        let f = factorize_covariance(&tiny).unwrap();
        assert_eq!(f.eigenvalues.min(), 0.0);
    }

    proptest! {
        #[test]
        fn factor_reconstructs_random_psd(seed in 0u64..1000, q in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(q, q, |_, _| rng.sample::<f64, _>(StandardNormal));
            let c = &a * a.transpose();
            let f = factorize_covariance(&c).unwrap();
            let err = (f.reconstruct() - &c).norm() / c.norm();
            prop_assert!(err <= 1e-10);
            let again = factorize_covariance(&f.reconstruct()).unwrap();
            prop_assert!((again.reconstruct() - f.reconstruct()).norm() / c.norm() <= 1e-8);
        }
    }

    #[test]
    fn full_batch_without_replacement_is_exact() {
        let land = random_grads(7, 3, 2);
        let model = GradientNoiseModel::minibatch(7, Sampling::WithoutReplacement);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = minibatch_gradient(&land, &[0.0; 3], &model, &mut rng).unwrap();
        assert_eq!(g, grad_full(&land, &[0.0; 3]).unwrap());
    }

    #[test]
    fn batch_of_one_is_a_single_example() {
        let land = random_grads(7, 3, 2);
        let model = GradientNoiseModel::minibatch(1, Sampling::WithReplacement);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = minibatch_gradient(&land, &[0.0; 3], &model, &mut rng).unwrap();
        assert!(land.0.iter().any(|row| row.as_slice() == g.as_slice()));
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let land = random_grads(4, 2, 2);
        let model = GradientNoiseModel::minibatch(5, Sampling::WithoutReplacement);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(minibatch_gradient(&land, &[0.0; 2], &model, &mut rng).is_err());
    }

    #[test]
    fn csv_dump_header() {
        let k = CovarianceEstimate { matrix: DMatrix::identity(2, 2), n_samples: 5, centered: true };
        let csv = k.to_csv();
        assert!(csv.starts_with("# q=2 centered=true n=5\n"));
        assert_eq!(csv.lines().nth(1), Some("1,0"));
    }
}
