use nalgebra::{DMatrix, Matrix6, Vector6};

use super::{Landscape, LandscapeKind};
use crate::error::{LabError, Result};

/// One declared minimum of a [`DoubleWell`].
#[derive(Debug, Clone, PartialEq)]
pub struct WellMinimum {
    pub location: Vec<f64>,
    pub depth: f64,
    pub hessian: DMatrix<f64>,
}

impl WellMinimum {
    pub fn hessian_det(&self) -> f64 {
        self.hessian.determinant()
    }
}

/// Target for one well along the `x` axis: position, depth and curvature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WellTarget {
    pub position: f64,
    pub depth: f64,
    pub curvature: f64,
    /// Width of the inverted Gaussian that carves the well.
    pub width: f64,
}

/// Two-minimum landscape in one or two dimensions.
///
/// Along `x` the profile is
/// `f(x) = q4·x⁴ + c3·x³ + c2·x² + c1·x + c0 − a_A·G_A(x) − a_B·G_B(x)`
/// with `G_i(x) = exp(−(x − x_i)² / 2w_i²)`. For fixed widths and quartic
/// confinement the six remaining coefficients enter linearly, so they are
/// solved exactly from the six conditions `f(x_i) = L_i`, `f'(x_i) = 0`,
/// `f''(x_i) = h_i`.
///
/// The 2-D variant adds `½·k(x)·y²`, where `k` blends logistically from the
/// A-side transverse curvature to the B-side one. Minima stay on `y = 0`
/// and their recorded Hessians are `diag(h_i, k(x_i))`.
#[derive(Debug, Clone)]
pub struct DoubleWell {
    quartic: f64,
    /// `[c3, c2, c1, c0, a_A, a_B]`
    coeffs: [f64; 6],
    targets: [WellTarget; 2],
    transverse: Option<Transverse>,
    minima: [WellMinimum; 2],
}

#[derive(Debug, Clone, Copy)]
struct Transverse {
    k_a: f64,
    k_b: f64,
    mid: f64,
    steepness: f64,
}

impl Transverse {
    /// `(k, k', k'')` at `x`.
    fn eval(&self, x: f64) -> (f64, f64, f64) {
        let s = 1.0 / (1.0 + (self.steepness * (x - self.mid)).exp());
        let b = self.steepness;
        let ds = -b * s * (1.0 - s);
        let d2s = b * b * s * (1.0 - s) * (1.0 - 2.0 * s);
        let dk = self.k_a - self.k_b;
        (self.k_b + dk * s, dk * ds, dk * d2s)
    }
}

fn gaussian(x: f64, center: f64, width: f64) -> (f64, f64, f64) {
    let d = x - center;
    let w2 = width * width;
    let g = (-d * d / (2.0 * w2)).exp();
    (g, -d / w2 * g, (d * d / (w2 * w2) - 1.0 / w2) * g)
}

impl DoubleWell {
    pub const DESCRIPTION: &'static str =
        "quartic confinement + cubic/quadratic/linear correction + two inverted Gaussian wells; \
         2-D adds a logistic-blended transverse quadratic";

    /// 1-D double well with minima exactly at the targets.
    pub fn one_dimensional(a: WellTarget, b: WellTarget, quartic: f64) -> Result<Self> {
        Self::build(a, b, quartic, None)
    }

    /// 2-D double well; `transverse = (k_A, k_B)` are the `y`-curvatures
    /// the blend tends to on each side.
    pub fn two_dimensional(a: WellTarget, b: WellTarget, quartic: f64, transverse: (f64, f64)) -> Result<Self> {
        let (k_a, k_b) = transverse;
        if !(k_a > 0.0 && k_b > 0.0) {
            return Err(LabError::invalid("transverse curvatures must be positive"));
        }
        let t = Transverse {
            k_a,
            k_b,
            mid: 0.5 * (a.position + b.position),
            steepness: 8.0 / (b.position - a.position),
        };
        Self::build(a, b, quartic, Some(t))
    }

    /// The asymmetric 1-D well used by the equilibrium checks: A at −1 (depth 0,
    /// curvature 4), B at +1 (depth 0.1, curvature 2). The barrier sits near
    /// 0.35 above A.
    pub fn standard_asymmetric() -> Self {
        Self::one_dimensional(
            WellTarget { position: -1.0, depth: 0.0, curvature: 4.0, width: 0.3 },
            WellTarget { position: 1.0, depth: 0.1, curvature: 2.0, width: 0.3 },
            0.1,
        )
        .expect("standard asymmetric well is valid")
    }

    /// Mirror-symmetric 1-D well (equal depths and curvatures).
    pub fn standard_symmetric() -> Self {
        Self::one_dimensional(
            WellTarget { position: -1.0, depth: 0.0, curvature: 4.0, width: 0.3 },
            WellTarget { position: 1.0, depth: 0.0, curvature: 4.0, width: 0.3 },
            0.1,
        )
        .expect("standard symmetric well is valid")
    }

    fn build(a: WellTarget, b: WellTarget, quartic: f64, transverse: Option<Transverse>) -> Result<Self> {
        for t in [&a, &b] {
            if !(t.curvature > 0.0 && t.width > 0.0 && t.position.is_finite() && t.depth.is_finite()) {
                return Err(LabError::invalid(format!("invalid well target {t:?}")));
            }
        }
        if !(quartic > 0.0) {
            return Err(LabError::invalid("quartic confinement must be positive"));
        }
        if (a.position - b.position).abs() < 1e-6 {
            return Err(LabError::invalid("well positions must differ"));
        }
        let mut m = Matrix6::<f64>::zeros();
        let mut rhs = Vector6::<f64>::zeros();
        for (row, t) in [a, b].iter().enumerate() {
            let x = t.position;
            let (ga, dga, d2ga) = gaussian(x, a.position, a.width);
            let (gb, dgb, d2gb) = gaussian(x, b.position, b.width);
            let r = 3 * row;
            m.row_mut(r).copy_from_slice(&[x * x * x, x * x, x, 1.0, -ga, -gb]);
            rhs[r] = t.depth - quartic * x.powi(4);
            m.row_mut(r + 1).copy_from_slice(&[3.0 * x * x, 2.0 * x, 1.0, 0.0, -dga, -dgb]);
            rhs[r + 1] = -4.0 * quartic * x.powi(3);
            m.row_mut(r + 2).copy_from_slice(&[6.0 * x, 2.0, 0.0, 0.0, -d2ga, -d2gb]);
            rhs[r + 2] = t.curvature - 12.0 * quartic * x * x;
        }
        let sol = m
            .lu()
            .solve(&rhs)
            .ok_or_else(|| LabError::invalid("double-well coefficient system is singular"))?;
        let coeffs = [sol[0], sol[1], sol[2], sol[3], sol[4], sol[5]];

        let placeholder = WellMinimum { location: vec![], depth: 0.0, hessian: DMatrix::zeros(0, 0) };
        let mut well = Self {
            quartic,
            coeffs,
            targets: [a, b],
            transverse,
            minima: [placeholder.clone(), placeholder],
        };
        for (i, t) in [a, b].iter().enumerate() {
            let location = if well.transverse.is_some() { vec![t.position, 0.0] } else { vec![t.position] };
            let hessian = well.hessian_at(&location);
            well.minima[i] = WellMinimum { location, depth: well.profile(t.position).0, hessian };
        }
        well.check_no_spurious_minima()?;
        Ok(well)
    }

    /// Rejects coefficient solutions that carve extra minima along `x`.
    fn check_no_spurious_minima(&self) -> Result<()> {
        let (lo, hi) = self.x_range();
        let span = hi - lo;
        let (lo, hi) = (lo - 2.0 * span, hi + 2.0 * span);
        let n = 20_000;
        let xs: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
        let f: Vec<f64> = xs.iter().map(|&x| self.profile(x).0).collect();
        let mut count = 0;
        for i in 1..n {
            if f[i] < f[i - 1] && f[i] <= f[i + 1] {
                count += 1;
            }
        }
        let floor = self.minima[0].depth.min(self.minima[1].depth);
        if count != 2 || f.iter().any(|&v| v < floor - 1e-9) {
            return Err(LabError::invalid(format!(
                "double-well construction has {count} local minima along x; adjust widths or confinement"
            )));
        }
        Ok(())
    }

    fn x_range(&self) -> (f64, f64) {
        let (a, b) = (self.targets[0].position, self.targets[1].position);
        (a.min(b), a.max(b))
    }

    /// `(f, f', f'')` of the `x` profile.
    pub fn profile(&self, x: f64) -> (f64, f64, f64) {
        let [c3, c2, c1, c0, aa, ab] = self.coeffs;
        let q4 = self.quartic;
        let (ga, dga, d2ga) = gaussian(x, self.targets[0].position, self.targets[0].width);
        let (gb, dgb, d2gb) = gaussian(x, self.targets[1].position, self.targets[1].width);
        let f = q4 * x.powi(4) + c3 * x.powi(3) + c2 * x * x + c1 * x + c0 - aa * ga - ab * gb;
        let df = 4.0 * q4 * x.powi(3) + 3.0 * c3 * x * x + 2.0 * c2 * x + c1 - aa * dga - ab * dgb;
        let d2f = 12.0 * q4 * x * x + 6.0 * c3 * x + 2.0 * c2 - aa * d2ga - ab * d2gb;
        (f, df, d2f)
    }

    pub fn minima(&self) -> &[WellMinimum; 2] {
        &self.minima
    }

    pub fn targets(&self) -> &[WellTarget; 2] {
        &self.targets
    }

    pub fn quartic(&self) -> f64 {
        self.quartic
    }

    pub fn minimum_a(&self) -> &WellMinimum {
        &self.minima[0]
    }

    pub fn minimum_b(&self) -> &WellMinimum {
        &self.minima[1]
    }

    pub fn dimension(&self) -> usize {
        if self.transverse.is_some() {
            2
        } else {
            1
        }
    }

    pub fn description(&self) -> &'static str {
        Self::DESCRIPTION
    }

    /// Location and height of the barrier between the wells along `x`.
    pub fn barrier(&self) -> (f64, f64) {
        let (mut lo, mut hi) = self.x_range();
        // Coarse scan, then golden-section refinement on the maximum.
        let n = 2000;
        let mut best = lo;
        let mut best_f = f64::NEG_INFINITY;
        for i in 1..n {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            let f = self.profile(x).0;
            if f > best_f {
                best_f = f;
                best = x;
            }
        }
        let step = (hi - lo) / n as f64;
        lo = best - step;
        hi = best + step;
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..200 {
            let x1 = hi - phi * (hi - lo);
            let x2 = lo + phi * (hi - lo);
            if self.profile(x1).0 > self.profile(x2).0 {
                hi = x2;
            } else {
                lo = x1;
            }
        }
        let x = 0.5 * (lo + hi);
        (x, self.profile(x).0)
    }

    fn hessian_at(&self, theta: &[f64]) -> DMatrix<f64> {
        let (_, _, d2f) = self.profile(theta[0]);
        match &self.transverse {
            None => DMatrix::from_element(1, 1, d2f),
            Some(t) => {
                let y = theta[1];
                let (k, dk, d2k) = t.eval(theta[0]);
                DMatrix::from_row_slice(2, 2, &[d2f + 0.5 * d2k * y * y, dk * y, dk * y, k])
            }
        }
    }
}

impl Landscape for DoubleWell {
    fn kind(&self) -> LandscapeKind {
        LandscapeKind::DoubleWell
    }

    fn dim(&self) -> usize {
        self.dimension()
    }

    fn num_examples(&self) -> usize {
        1
    }

    fn loss_raw(&self, theta: &[f64]) -> f64 {
        let f = self.profile(theta[0]).0;
        match &self.transverse {
            None => f,
            Some(t) => f + 0.5 * t.eval(theta[0]).0 * theta[1] * theta[1],
        }
    }

    fn example_grad_into(&self, theta: &[f64], _index: usize, out: &mut [f64]) {
        let df = self.profile(theta[0]).1;
        match &self.transverse {
            None => out[0] = df,
            Some(t) => {
                let y = theta[1];
                let (k, dk, _) = t.eval(theta[0]);
                out[0] = df + 0.5 * dk * y * y;
                out[1] = k * y;
            }
        }
    }

    fn full_grad_into(&self, theta: &[f64], out: &mut [f64]) {
        self.example_grad_into(theta, 0, out);
    }

    fn analytic_hessian(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.hessian_at(theta))
    }
}
