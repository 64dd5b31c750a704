use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_dim, Landscape, LandscapeKind, ParameterVector};
use crate::error::{LabError, Result};

/// Quadratic bowl `L(θ) = Σ_i λ_i z_i²` with `z = Bᵀ(θ − θ*)`.
///
/// Convention: the stored `eigenvalues` λ_i are the coefficients of the
/// quadratic form, so the loss is `½ zᵀ(2Λ)z`, the gradient is `B(2Λz)` and
/// the Hessian is `H = B diag(2λ) Bᵀ`. Every trace and expected-loss
/// relation in the crate is stated in terms of `H`, so `Tr(H) = 2 Σ λ_i`.
#[derive(Debug, Clone)]
pub struct QuadraticBowl {
    center: ParameterVector,
    eigenvalues: Vec<f64>,
    basis: DMatrix<f64>,
}

const ORTHONORMAL_TOL: f64 = 1e-10;

impl QuadraticBowl {
    pub fn new(center: ParameterVector, eigenvalues: Vec<f64>, basis: DMatrix<f64>) -> Result<Self> {
        let q = center.len();
        check_dim(q, eigenvalues.len())?;
        if basis.nrows() != q || basis.ncols() != q {
            return Err(LabError::invalid(format!(
                "basis must be {q}x{q}, got {}x{}",
                basis.nrows(),
                basis.ncols()
            )));
        }
        if let Some(bad) = eigenvalues.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
            return Err(LabError::invalid(format!("bowl eigenvalues must be positive, got {bad}")));
        }
        let gram = basis.transpose() * &basis;
        let dev = (gram - DMatrix::<f64>::identity(q, q)).amax();
        if dev > ORTHONORMAL_TOL {
            return Err(LabError::invalid(format!("basis is not orthonormal (deviation {dev:e})")));
        }
        Ok(Self { center, eigenvalues, basis })
    }

    pub fn axis_aligned(center: ParameterVector, eigenvalues: Vec<f64>) -> Result<Self> {
        let q = center.len();
        Self::new(center, eigenvalues, DMatrix::identity(q, q))
    }

    /// Bowl whose eigenbasis is a random rotation (QR of a Gaussian matrix).
    pub fn rotated<R: Rng + ?Sized>(center: ParameterVector, eigenvalues: Vec<f64>, rng: &mut R) -> Result<Self> {
        let q = center.len();
        let gaussian = DMatrix::from_fn(q, q, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = gaussian.qr();
        let mut basis = qr.q();
        let r = qr.r();
        // Fix column signs so the rotation is a deterministic function of the draw.
        for j in 0..q {
            if r[(j, j)] < 0.0 {
                basis.column_mut(j).neg_mut();
            }
        }
        Self::new(center, eigenvalues, basis)
    }

    pub fn center(&self) -> &ParameterVector {
        &self.center
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    /// Eigenvalues of the Hessian, `2λ_i`.
    pub fn hessian_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| 2.0 * l).collect()
    }

    pub fn hessian_trace(&self) -> f64 {
        2.0 * self.eigenvalues.iter().sum::<f64>()
    }

    pub fn hessian(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&DVector::from_iterator(
            self.eigenvalues.len(),
            self.eigenvalues.iter().map(|l| 2.0 * l),
        ));
        let h = &self.basis * d * self.basis.transpose();
        (&h + h.transpose()) * 0.5
    }

    /// `z = Bᵀ(θ − θ*)`.
    pub fn to_eigen_coords(&self, theta: &[f64]) -> Vec<f64> {
        let q = self.dim();
        let mut z = vec![0.0; q];
        for (j, zj) in z.iter_mut().enumerate() {
            let col = self.basis.column(j);
            *zj = (0..q).map(|i| col[i] * (theta[i] - self.center[i])).sum();
        }
        z
    }

    /// `θ = θ* + Bz`.
    pub fn from_eigen_coords(&self, z: &[f64]) -> Vec<f64> {
        let q = self.dim();
        (0..q)
            .map(|i| self.center[i] + (0..q).map(|j| self.basis[(i, j)] * z[j]).sum::<f64>())
            .collect()
    }
}

impl Landscape for QuadraticBowl {
    fn kind(&self) -> LandscapeKind {
        LandscapeKind::QuadraticBowl
    }

    fn dim(&self) -> usize {
        self.center.len()
    }

    fn num_examples(&self) -> usize {
        1
    }

    fn loss_raw(&self, theta: &[f64]) -> f64 {
        self.to_eigen_coords(theta)
            .iter()
            .zip(&self.eigenvalues)
            .map(|(z, l)| l * z * z)
            .sum()
    }

    fn example_grad_into(&self, theta: &[f64], _index: usize, out: &mut [f64]) {
        let scaled: Vec<f64> = self
            .to_eigen_coords(theta)
            .iter()
            .zip(&self.eigenvalues)
            .map(|(z, l)| 2.0 * l * z)
            .collect();
        let q = self.dim();
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..q).map(|j| self.basis[(i, j)] * scaled[j]).sum();
        }
    }

    fn full_grad_into(&self, theta: &[f64], out: &mut [f64]) {
        self.example_grad_into(theta, 0, out);
    }

    fn analytic_hessian(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.hessian())
    }
}
