use crate::error::{LabError, Result};

/// `(η, S) ↦ (aη, round(aS))`. Iteration counts map as `k' = k / a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescaledConfig {
    pub a: f64,
    pub eta: f64,
    pub batch_size: usize,
    /// `(η'/S') / (η/S) − 1`, non-zero only when `aS` is not an integer.
    pub ratio_residual: f64,
}

impl RescaledConfig {
    /// Number of steps that cover the same epochs as `k` base steps.
    pub fn steps_for(&self, k: u64) -> f64 {
        k as f64 / self.a
    }
}

pub fn rescale_config(eta: f64, batch_size: usize, a: f64) -> Result<RescaledConfig> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(LabError::invalid(format!("rescale factor must be positive, got {a}")));
    }
    if !(eta > 0.0) || batch_size == 0 {
        return Err(LabError::invalid("base configuration needs η > 0 and S ≥ 1"));
    }
    let s = (a * batch_size as f64).round();
    if s < 1.0 {
        return Err(LabError::invalid(format!("rescaled batch size round({a}·{batch_size}) is zero")));
    }
    let s = s as usize;
    let eta_new = a * eta;
    let ratio_residual = (eta_new / s as f64) / (eta / batch_size as f64) - 1.0;
    Ok(RescaledConfig { a, eta: eta_new, batch_size: s, ratio_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity() {
        let r = rescale_config(0.02, 25, 1.0).unwrap();
        assert_eq!((r.eta, r.batch_size, r.ratio_residual), (0.02, 25, 0.0));
    }

    #[test]
    fn published_pairs() {
        let r = rescale_config(0.001, 128, 5.0).unwrap();
        assert!((r.eta - 0.005).abs() < 1e-15);
        assert_eq!(r.batch_size, 640);
        let r = rescale_config(0.1, 50, 4.0).unwrap();
        assert!((r.eta - 0.4).abs() < 1e-15);
        assert_eq!(r.batch_size, 200);
        assert_eq!(r.steps_for(800), 200.0);
    }

    #[test]
    fn rejects_empty_batch() {
        assert!(rescale_config(0.1, 1, 0.4).is_err());
        assert!(rescale_config(0.1, 10, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn ratio_preserved_up_to_rounding(eta in 1e-4f64..1.0, s in 1usize..500, a in 0.1f64..20.0) {
            if let Ok(r) = rescale_config(eta, s, a) {
                let bound = 1.0 / (2.0 * (a * s as f64) - 1.0);
                prop_assert!(r.ratio_residual.abs() <= bound + 1e-12);
            }
        }
    }
}
