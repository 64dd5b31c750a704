use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{LabError, Result};
use crate::landscape::{check_dim, QuadraticBowl};

/// Exact propagator of `dz = −Λ z dt + √(η/S) Λ^{1/2} dW` with diagonal `Λ`.
///
/// `rates` are the diagonal of `Λ`, i.e. the Hessian eigenvalues. With the
/// bowl convention `L = Σ λ_i z_i²` those are `2λ_i`; see [`OuProcess::from_bowl`].
#[derive(Debug, Clone, PartialEq)]
pub struct OuProcess {
    rates: Vec<f64>,
}

impl OuProcess {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.is_empty() {
            return Err(LabError::invalid("OU process needs at least one coordinate"));
        }
        if let Some(bad) = rates.iter().find(|&&r| !(r > 0.0 && r.is_finite())) {
            return Err(LabError::invalid(format!("OU rates must be positive, got {bad}")));
        }
        Ok(Self { rates })
    }

    /// The OU process of SGD in `bowl` under `C = H`.
    pub fn from_bowl(bowl: &QuadraticBowl) -> Self {
        Self { rates: bowl.hessian_eigenvalues() }
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// `η / 2S`, the same for every coordinate.
    pub fn stationary_variance(eta: f64, batch_size: usize) -> f64 {
        eta / (2.0 * batch_size as f64)
    }

    pub fn mean(&self, z0: &[f64], t: f64) -> Vec<f64> {
        z0.iter().zip(&self.rates).map(|(z, r)| (-r * t).exp() * z).collect()
    }

    pub fn variance(&self, t: f64, eta: f64, batch_size: usize) -> Vec<f64> {
        let v = Self::stationary_variance(eta, batch_size);
        self.rates.iter().map(|r| v * -(-2.0 * r * t).exp_m1()).collect()
    }

    /// One exact draw of `z(t)` given `z(0) = z0`.
    pub fn sample<R: Rng + ?Sized>(&self, z0: &[f64], t: f64, eta: f64, batch_size: usize, rng: &mut R) -> Result<Vec<f64>> {
        check_dim(self.rates.len(), z0.len())?;
        if !(t >= 0.0) || !(eta > 0.0) || batch_size == 0 {
            return Err(LabError::invalid("OU sample needs t ≥ 0, η > 0, S ≥ 1"));
        }
        let mean = self.mean(z0, t);
        let var = self.variance(t, eta, batch_size);
        Ok(mean.iter().zip(&var).map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect())
    }
}

/// Exact OU transition for SGD in a quadratic bowl with `C = H`, in the
/// bowl's eigen-coordinates.
pub fn ou_analytic_sample<R: Rng + ?Sized>(
    bowl: &QuadraticBowl,
    z0: &[f64],
    t: f64,
    eta: f64,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    OuProcess::from_bowl(bowl).sample(z0, t, eta, batch_size, rng)
}
