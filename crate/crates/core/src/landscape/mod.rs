//! Loss surfaces the dynamics run on.
//!
//! Every landscape exposes the loss `L(θ) = (1/N) Σ_n l(θ, x_n)`, per-example
//! gradients `g_n(θ)` and the full gradient `g(θ)`. Analytic landscapes are
//! treated as a dataset of a single example, so `g_1 = g`.

mod checkpoint;
mod dataset;
mod double_well;
mod mlp;
mod quadratic;

use std::fmt;
use std::ops::Deref;

use nalgebra::DMatrix;

use crate::error::{LabError, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use dataset::{make_synthetic_dataset, make_train_val, Dataset, DatasetSpec, Generator};
pub use double_well::{DoubleWell, WellMinimum, WellTarget};
pub use mlp::{Activation, Mlp, MlpLandscape, MlpModel};
pub use quadratic::QuadraticBowl;

/// Flat parameter vector `θ` of fixed length `q`. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LabError::non_finite("parameter vector construction"));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    /// Wraps values already known to be finite.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    /// Wraps `values`, failing with `context` if any entry is non-finite.
    pub(crate) fn checked(values: Vec<f64>, context: &str) -> Result<Self> {
        if values.iter().all(|v| v.is_finite()) {
            Ok(Self(values))
        } else {
            Err(LabError::non_finite(context))
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.0, &other.0)
    }

    /// `(1 - alpha) * self + alpha * other`.
    pub fn lerp(&self, other: &Self, alpha: f64) -> Result<Self> {
        check_dim(self.len(), other.len())?;
        let values = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
            .collect();
        Self::checked(values, "interpolation")
    }
}

impl Deref for ParameterVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<ParameterVector> for Vec<f64> {
    fn from(p: ParameterVector) -> Self {
        p.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LandscapeKind {
    QuadraticBowl,
    DoubleWell,
    Mlp,
}

impl LandscapeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LandscapeKind::QuadraticBowl => "quadratic-bowl",
            LandscapeKind::DoubleWell => "double-well",
            LandscapeKind::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "quadratic-bowl" | "bowl" => Some(LandscapeKind::QuadraticBowl),
            "double-well" => Some(LandscapeKind::DoubleWell),
            "mlp" => Some(LandscapeKind::Mlp),
            _ => None,
        }
    }
}

impl fmt::Display for LandscapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Held-out metrics for classification landscapes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// A loss surface with per-example gradients.
///
/// The raw methods take slices and skip validation; they are the hot path for
/// the integrators. Callers outside the crate normally go through the checked
/// free functions [`loss_at`], [`grad_example`] and [`grad_full`].
pub trait Landscape: Send + Sync {
    fn kind(&self) -> LandscapeKind;

    /// Number of parameters `q`.
    fn dim(&self) -> usize;

    /// Number of training examples `N` (1 for analytic landscapes).
    fn num_examples(&self) -> usize;

    fn loss_raw(&self, theta: &[f64]) -> f64;

    /// Writes `g_n(θ)` into `out`.
    fn example_grad_into(&self, theta: &[f64], index: usize, out: &mut [f64]);

    /// Adds `Σ_{n ∈ indices} g_n(θ)` to `out`, in the order given.
    fn accumulate_example_grads(&self, theta: &[f64], indices: &[usize], out: &mut [f64]) {
        let mut buf = vec![0.0; self.dim()];
        for &n in indices {
            self.example_grad_into(theta, n, &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += b;
            }
        }
    }

    /// Writes `g(θ) = (1/N) Σ_n g_n(θ)` into `out`, accumulating in index order.
    fn full_grad_into(&self, theta: &[f64], out: &mut [f64]) {
        let n = self.num_examples();
        out.iter_mut().for_each(|o| *o = 0.0);
        let indices: Vec<usize> = (0..n).collect();
        self.accumulate_example_grads(theta, &indices, out);
        let inv = 1.0 / n as f64;
        out.iter_mut().for_each(|o| *o *= inv);
    }

    fn analytic_hessian(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Training-set accuracy, for classification landscapes.
    fn train_accuracy(&self, _theta: &[f64]) -> Option<f64> {
        None
    }

    /// Held-out loss and accuracy, when a validation set is attached.
    fn validation(&self, _theta: &[f64]) -> Option<Evaluation> {
        None
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(LabError::DimensionMismatch { expected, got })
    }
}

/// `L(θ)`, checked.
pub fn loss_at(landscape: &dyn Landscape, theta: &[f64]) -> Result<f64> {
    check_dim(landscape.dim(), theta.len())?;
    let loss = landscape.loss_raw(theta);
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(LabError::non_finite("loss evaluation"))
    }
}

/// `g_n(θ)`, checked.
pub fn grad_example(landscape: &dyn Landscape, theta: &[f64], index: usize) -> Result<ParameterVector> {
    check_dim(landscape.dim(), theta.len())?;
    let len = landscape.num_examples();
    if index >= len {
        return Err(LabError::IndexOutOfRange { index, len });
    }
    let mut out = vec![0.0; landscape.dim()];
    landscape.example_grad_into(theta, index, &mut out);
    ParameterVector::checked(out, "per-example gradient")
}

/// `g(θ)`, checked.
pub fn grad_full(landscape: &dyn Landscape, theta: &[f64]) -> Result<ParameterVector> {
    check_dim(landscape.dim(), theta.len())?;
    let mut out = vec![0.0; landscape.dim()];
    landscape.full_grad_into(theta, &mut out);
    ParameterVector::checked(out, "full gradient")
}

/// Exact Hessian where the landscape has one in closed form.
pub fn analytic_hessian(landscape: &dyn Landscape, theta: &[f64]) -> Result<DMatrix<f64>> {
    check_dim(landscape.dim(), theta.len())?;
    landscape.analytic_hessian(theta).ok_or(LabError::Unsupported {
        op: "analytic_hessian",
        kind: landscape.kind(),
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
