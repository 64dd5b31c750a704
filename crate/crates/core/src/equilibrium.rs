//! Temperature, the Gibbs–Boltzmann density, Laplace basin probabilities and
//! empirical basin occupancy.
//!
//! The density is `P(θ) = P_0 exp(−L(θ)/2T)` exactly as written, and the
//! Laplace ratio `p_A/p_B = √(det H_B / det H_A) · exp((L_B − L_A)/2T)` is
//! its small-`T` limit. Plain SGD with isotropic noise `σ²I` and
//! `T = ησ²/S` is the Euler–Maruyama scheme for
//! `dθ = −∇L dt + √T dW`, whose stationary law is `∝ exp(−2L/T)`. That is
//! the density above evaluated at `T/4`; [`Temperature::density_temperature`]
//! returns that value so SGD runs can be compared against quadrature.

use std::fmt::Write as _;

use nalgebra::DMatrix;

use crate::dynamics::PathSamples;
use crate::error::{LabError, Result};
use crate::landscape::{check_dim, DoubleWell, Landscape, WellMinimum};

/// Default quadrature resolution per axis.
pub const POINTS_1D: usize = 4001;
pub const POINTS_2D: usize = 801;
/// Half-width of the quadrature box in Laplace standard deviations.
pub const GRID_SIGMAS: f64 = 6.0;
/// Fraction of samples discarded before counting occupancy.
pub const DEFAULT_BURN_IN: f64 = 0.2;
/// Transitions needed before an occupancy estimate is trusted.
pub const MIN_TRANSITIONS: usize = 10;
/// A trajectory commits to a basin once it is this far, as a fraction, from
/// the separatrix towards the minimum.
pub const CORE_MARGIN: f64 = 0.5;
/// Largest change of `p_A` tolerated when the grid spacing is halved.
pub const RESOLUTION_TOL: f64 = 1e-3;

/// `T = η σ² / S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperature {
    pub eta: f64,
    pub sigma2: f64,
    pub batch_size: usize,
    /// Set when `σ²` was read off a non-isotropic covariance as `Tr(C)/q`.
    pub approximate: bool,
}

impl Temperature {
    pub fn new(eta: f64, sigma2: f64, batch_size: usize) -> Result<Self> {
        if !(eta > 0.0 && sigma2 > 0.0) || batch_size == 0 {
            return Err(LabError::invalid("temperature needs η > 0, σ² > 0 and S ≥ 1"));
        }
        Ok(Self { eta, sigma2, batch_size, approximate: false })
    }

    /// `σ² = Tr(C)/q` for a covariance that is not a multiple of the identity.
    pub fn from_covariance(eta: f64, covariance: &DMatrix<f64>, batch_size: usize) -> Result<Self> {
        let q = covariance.nrows();
        if q == 0 {
            return Err(LabError::invalid("empty covariance"));
        }
        let mut t = Self::new(eta, covariance.trace() / q as f64, batch_size)?;
        t.approximate = true;
        Ok(t)
    }

    pub fn value(&self) -> f64 {
        self.eta * self.sigma2 / self.batch_size as f64
    }

    /// The `T` at which `exp(−L/2T)` is the stationary law of this SGD run.
    pub fn density_temperature(&self) -> f64 {
        self.value() / 4.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basin {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinSpec {
    pub label: Basin,
    pub location: Vec<f64>,
    pub loss: f64,
    pub hessian: DMatrix<f64>,
}

impl BasinSpec {
    pub fn new(label: Basin, location: Vec<f64>, loss: f64, hessian: DMatrix<f64>) -> Result<Self> {
        if hessian.nrows() != location.len() || hessian.ncols() != location.len() {
            return Err(LabError::DimensionMismatch { expected: location.len(), got: hessian.nrows() });
        }
        let det = hessian.determinant();
        if !(det > 0.0) {
            return Err(LabError::invalid(format!("basin Hessian determinant must be positive, got {det}")));
        }
        Ok(Self { label, location, loss, hessian })
    }

    pub fn from_minimum(label: Basin, m: &WellMinimum) -> Result<Self> {
        Self::new(label, m.location.clone(), m.depth, m.hessian.clone())
    }

    pub fn hessian_det(&self) -> f64 {
        self.hessian.determinant()
    }

    fn min_curvature(&self) -> f64 {
        self.hessian.clone().symmetric_eigen().eigenvalues.min()
    }
}

/// Both basins of a double well.
pub fn well_basins(well: &DoubleWell) -> Result<(BasinSpec, BasinSpec)> {
    Ok((BasinSpec::from_minimum(Basin::A, well.minimum_a())?, BasinSpec::from_minimum(Basin::B, well.minimum_b())?))
}

/// `√(det H_B / det H_A) · exp((L_B − L_A) / 2T)`.
pub fn laplace_ratio(a: &BasinSpec, b: &BasinSpec, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(LabError::invalid(format!("temperature must be positive, got {t}")));
    }
    let (da, db) = (a.hessian_det(), b.hessian_det());
    if !(da > 0.0 && db > 0.0) {
        return Err(LabError::invalid("Hessian determinants must be positive"));
    }
    Ok((db / da).sqrt() * ((b.loss - a.loss) / (2.0 * t)).exp())
}

/// `p_A` implied by a ratio `p_A/p_B`.
pub fn ratio_to_pa(ratio: f64) -> f64 {
    if ratio.is_infinite() {
        1.0
    } else {
        ratio / (1.0 + ratio)
    }
}

/// Basin membership rule. In 1-D the barrier point splits the line; in 2-D
/// the nearer minimum under each basin's own Hessian metric wins. Ties go to A.
#[derive(Debug, Clone, PartialEq)]
pub enum Separatrix {
    Point { x: f64, a: f64, b: f64 },
    Mahalanobis { a: Vec<f64>, ha: DMatrix<f64>, b: Vec<f64>, hb: DMatrix<f64> },
}

impl Separatrix {
    pub fn for_well(well: &DoubleWell) -> Self {
        let (a, b) = (well.minimum_a(), well.minimum_b());
        if well.dimension() == 1 {
            Separatrix::Point { x: well.barrier().0, a: a.location[0], b: b.location[0] }
        } else {
            Separatrix::Mahalanobis {
                a: a.location.clone(),
                ha: a.hessian.clone(),
                b: b.location.clone(),
                hb: b.hessian.clone(),
            }
        }
    }

    /// Signed commitment in `[−1, 1]`: positive on the A side, `1` at (or
    /// beyond) minimum A, `−1` at minimum B.
    pub fn score(&self, theta: &[f64]) -> f64 {
        match self {
            Separatrix::Point { x, a, b } => {
                let t = theta[0];
                if (t - x) * (a - x) >= 0.0 {
                    ((t - x) / (a - x)).min(1.0)
                } else {
                    -((t - x) / (b - x)).min(1.0)
                }
            }
            Separatrix::Mahalanobis { a, ha, b, hb } => {
                let da = quad_form(ha, theta, a);
                let db = quad_form(hb, theta, b);
                if da + db == 0.0 {
                    1.0
                } else {
                    (db - da) / (db + da)
                }
            }
        }
    }

    pub fn classify(&self, theta: &[f64]) -> Basin {
        if self.score(theta) >= 0.0 {
            Basin::A
        } else {
            Basin::B
        }
    }
}

fn quad_form(h: &DMatrix<f64>, theta: &[f64], center: &[f64]) -> f64 {
    let d: Vec<f64> = theta.iter().zip(center).map(|(t, c)| t - c).collect();
    let mut s = 0.0;
    for i in 0..d.len() {
        for j in 0..d.len() {
            s += d[i] * h[(i, j)] * d[j];
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occupancy {
    pub p_a: f64,
    pub p_b: f64,
    pub n_transitions: usize,
    pub n_samples: usize,
    pub reliable: bool,
}

/// Fraction of post-burn-in samples in each basin.
///
/// A transition is counted each time the path moves from the core of one
/// basin (commitment ≥ [`CORE_MARGIN`]) to the core of the other, so
/// jitter around the separatrix is not counted.
pub fn basin_occupancy(samples: &PathSamples, separatrix: &Separatrix, burn_in: f64) -> Result<Occupancy> {
    if !(0.0..1.0).contains(&burn_in) {
        return Err(LabError::invalid(format!("burn-in fraction must lie in [0, 1), got {burn_in}")));
    }
    let start = (burn_in * samples.len() as f64).floor() as usize;
    let kept = samples.len() - start;
    if kept < 100 {
        return Err(LabError::invalid(format!("need at least 100 post-burn-in samples, got {kept}")));
    }
    let mut in_a = 0usize;
    let mut transitions = 0usize;
    let mut committed: Option<Basin> = None;
    for i in start..samples.len() {
        let s = separatrix.score(samples.get(i));
        if s >= 0.0 {
            in_a += 1;
        }
        let core = if s >= CORE_MARGIN {
            Some(Basin::A)
        } else if s <= -CORE_MARGIN {
            Some(Basin::B)
        } else {
            None
        };
        if let Some(c) = core {
            if committed.is_some_and(|prev| prev != c) {
                transitions += 1;
            }
            committed = Some(c);
        }
    }
    let p_a = in_a as f64 / kept as f64;
    Ok(Occupancy { p_a, p_b: 1.0 - p_a, n_transitions: transitions, n_samples: kept, reliable: transitions >= MIN_TRANSITIONS })
}

/// Uniform grid over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points: usize,
}

impl GridSpec {
    /// Box spanning all minima, widened by `6·√(2T/h_min)` where `h_min` is
    /// the smallest Hessian eigenvalue over the basins.
    pub fn around(basins: &[&BasinSpec], t: f64) -> Result<Self> {
        let first = basins.first().ok_or_else(|| LabError::invalid("no basins given"))?;
        let d = first.location.len();
        if d == 0 || d > 2 {
            return Err(LabError::invalid(format!("quadrature supports 1 or 2 dimensions, got {d}")));
        }
        let h_min = basins.iter().map(|b| b.min_curvature()).fold(f64::INFINITY, f64::min);
        if !(h_min > 0.0) {
            return Err(LabError::invalid("basin curvature must be positive"));
        }
        let pad = GRID_SIGMAS * (2.0 * t / h_min).sqrt();
        let lower = (0..d).map(|k| basins.iter().map(|b| b.location[k]).fold(f64::INFINITY, f64::min) - pad).collect();
        let upper = (0..d).map(|k| basins.iter().map(|b| b.location[k]).fold(f64::NEG_INFINITY, f64::max) + pad).collect();
        Ok(Self { lower, upper, points: if d == 1 { POINTS_1D } else { POINTS_2D } })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    fn spacing(&self, k: usize) -> f64 {
        (self.upper[k] - self.lower[k]) / (self.points - 1) as f64
    }

    fn coord(&self, k: usize, i: usize) -> f64 {
        self.lower[k] + self.spacing(k) * i as f64
    }

    /// Same box, half the spacing.
    pub fn refined(&self) -> Self {
        Self { points: 2 * self.points - 1, ..self.clone() }
    }

    fn contains(&self, theta: &[f64]) -> bool {
        theta.iter().zip(self.lower.iter().zip(&self.upper)).all(|(t, (l, u))| *t >= *l && *t <= *u)
    }
}

/// `P_0 exp(−L/2T)` on a grid, normalised by trapezoid quadrature.
pub struct BoltzmannDensity<'a> {
    landscape: &'a dyn Landscape,
    t: f64,
    grid: GridSpec,
    /// Loss offset used to keep exponentials in range.
    reference: f64,
    /// `∫ exp(−(L − reference)/2T)` over the grid.
    partition: f64,
}

impl<'a> BoltzmannDensity<'a> {
    pub fn new(landscape: &'a dyn Landscape, t: f64, grid: GridSpec) -> Result<Self> {
        check_dim(landscape.dim(), grid.dim())?;
        if !(t > 0.0 && t.is_finite()) {
            return Err(LabError::invalid(format!("temperature must be positive, got {t}")));
        }
        if grid.dim() > 2 || grid.points < 3 {
            return Err(LabError::invalid("quadrature grid must be 1-D or 2-D with at least 3 points per axis"));
        }
        if grid.lower.iter().zip(&grid.upper).any(|(l, u)| !(u > l)) {
            return Err(LabError::invalid("quadrature box is empty"));
        }
        let mut d = Self { landscape, t, grid, reference: 0.0, partition: 1.0 };
        d.reference = d.fold(|acc, _, l, _| acc.min(l), f64::INFINITY);
        d.partition = d.fold(|acc, _, l, w| acc + w * d.weight(l), 0.0);
        if !(d.partition > 0.0 && d.partition.is_finite()) {
            return Err(LabError::non_finite("Boltzmann normaliser"));
        }
        Ok(d)
    }

    /// Density for a double well at temperature `t` on the default grid.
    pub fn for_well(well: &'a DoubleWell, t: f64) -> Result<Self> {
        let (a, b) = well_basins(well)?;
        Self::new(well, t, GridSpec::around(&[&a, &b], t)?)
    }

    pub fn temperature(&self) -> f64 {
        self.t
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// `ln P_0`.
    pub fn log_normalizer(&self) -> f64 {
        -self.reference / (2.0 * self.t) - self.partition.ln()
    }

    pub fn normalizer(&self) -> f64 {
        self.log_normalizer().exp()
    }

    fn weight(&self, loss: f64) -> f64 {
        (-(loss - self.reference) / (2.0 * self.t)).exp()
    }

    /// Visits every grid point as `(acc, θ, L(θ), trapezoid weight)` in a fixed order.
    fn fold<F: FnMut(f64, &[f64], f64, f64) -> f64>(&self, mut f: F, init: f64) -> f64 {
        let g = &self.grid;
        let n = g.points;
        let edge = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let mut acc = init;
        match g.dim() {
            1 => {
                let h = g.spacing(0);
                for i in 0..n {
                    let th = [g.coord(0, i)];
                    acc = f(acc, &th, self.landscape.loss_raw(&th), h * edge(i));
                }
            }
            _ => {
                let area = g.spacing(0) * g.spacing(1);
                for i in 0..n {
                    for j in 0..n {
                        let th = [g.coord(0, i), g.coord(1, j)];
                        acc = f(acc, &th, self.landscape.loss_raw(&th), area * edge(i) * edge(j));
                    }
                }
            }
        }
        acc
    }

    /// `P(θ)`; `θ` must lie in the quadrature box.
    pub fn density(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.grid.dim(), theta.len())?;
        if !self.grid.contains(theta) {
            return Err(LabError::invalid(format!("point {theta:?} lies outside the quadrature box")));
        }
        Ok(self.weight(self.landscape.loss_raw(theta)) / self.partition)
    }

    /// Trapezoid integral of the normalised density over the grid.
    pub fn total_mass(&self) -> f64 {
        self.fold(|acc, _, l, w| acc + w * self.weight(l), 0.0) / self.partition
    }

    /// Variance of the first coordinate under the density.
    pub fn variance(&self) -> f64 {
        let m = self.fold(|acc, th, l, w| acc + w * th[0] * self.weight(l), 0.0) / self.partition;
        self.fold(|acc, th, l, w| acc + w * (th[0] - m).powi(2) * self.weight(l), 0.0) / self.partition
    }

    /// Mass on each side of `separatrix`. In 1-D the cell containing the
    /// split point is divided with linear interpolation. Both sides are
    /// summed separately so a tiny basin keeps its relative precision.
    fn basin_masses(&self, separatrix: &Separatrix) -> (f64, f64) {
        let (mut a, mut b) = (0.0, 0.0);
        if let (1, Separatrix::Point { x: s, .. }) = (self.grid.dim(), separatrix) {
            let g = &self.grid;
            let h = g.spacing(0);
            let mut prev: Option<(f64, f64)> = None;
            for i in 0..g.points {
                let x = g.coord(0, i);
                let rho = self.weight(self.landscape.loss_raw(&[x]));
                if let Some((x0, r0)) = prev {
                    let (in0, in1) = (separatrix.classify(&[x0]) == Basin::A, separatrix.classify(&[x]) == Basin::A);
                    if in0 == in1 {
                        let m = 0.5 * h * (r0 + rho);
                        if in0 {
                            a += m;
                        } else {
                            b += m;
                        }
                    } else {
                        let rs = self.weight(self.landscape.loss_raw(&[*s]));
                        let (left, right) = (0.5 * (s - x0) * (r0 + rs), 0.5 * (x - s) * (rs + rho));
                        if in0 {
                            a += left;
                            b += right;
                        } else {
                            b += left;
                            a += right;
                        }
                    }
                }
                prev = Some((x, rho));
            }
        } else {
            a = self.fold(|acc, th, l, w| if separatrix.classify(th) == Basin::A { acc + w * self.weight(l) } else { acc }, 0.0);
            b = self.fold(|acc, th, l, w| if separatrix.classify(th) == Basin::B { acc + w * self.weight(l) } else { acc }, 0.0);
        }
        (a / self.partition, b / self.partition)
    }
}

pub fn boltzmann_density(density: &BoltzmannDensity<'_>, theta: &[f64]) -> Result<f64> {
    density.density(theta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOccupancy {
    pub p_a: f64,
    pub p_b: f64,
    /// `|p_A(h) − p_A(h/2)|`.
    pub resolution_change: f64,
}

/// Basin probabilities by direct quadrature, checked against a grid with
/// half the spacing.
pub fn occupancy_from_quadrature(density: &BoltzmannDensity<'_>, separatrix: &Separatrix) -> Result<QuadratureOccupancy> {
    let (a, b) = density.basin_masses(separatrix);
    let fine = BoltzmannDensity::new(density.landscape, density.t, density.grid.refined())?;
    let (fa, fb) = fine.basin_masses(separatrix);
    let change = (fa / (fa + fb) - a / (a + b)).abs();
    if change > RESOLUTION_TOL {
        return Err(LabError::GridTooCoarse { change });
    }
    Ok(QuadratureOccupancy { p_a: fa / (fa + fb), p_b: fb / (fa + fb), resolution_change: change })
}

pub const OCCUPANCY_CSV_HEADER: &str = "T,eta,batch_size,sigma2,p_a,p_b,n_transitions,reliable,laplace_ratio,quadrature_pa";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupancyRow {
    pub temperature: Temperature,
    pub occupancy: Occupancy,
    pub laplace_ratio: f64,
    pub quadrature_pa: f64,
}

pub fn occupancy_csv(rows: &[OccupancyRow]) -> String {
    let mut s = String::from(OCCUPANCY_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let t = &r.temperature;
        let o = &r.occupancy;
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            t.value(),
            t.eta,
            t.batch_size,
            t.sigma2,
            o.p_a,
            o.p_b,
            o.n_transitions,
            o.reliable,
            r.laplace_ratio,
            r.quadrature_pa
        )
        .unwrap();
    }
    s
}
