//! Stationary-law checks on analytic landscapes: OU spread and expected loss
//! on a quadratic bowl, Laplace against quadrature and SGD occupancy on a
//! double well.

use std::fmt::Write as _;

use crate::dynamics::{sample_path, PathSamples};
use crate::equilibrium::{
    basin_occupancy, laplace_ratio, occupancy_csv, occupancy_from_quadrature, well_basins, BoltzmannDensity, Occupancy,
    OccupancyRow, Separatrix, Temperature, DEFAULT_BURN_IN,
};
use crate::error::{LabError, Result};
use crate::landscape::{Landscape, ParameterVector, QuadraticBowl};
use crate::noise::{factorize_covariance, CovarianceSource, GradientNoiseModel};

use super::chart::{Chart, Series, Style};
use super::config::ExperimentConfig;
use super::output::{Check, ExperimentOutput};
use super::setup::{build_bowl, build_well, par_map, RunOptions};

pub const VARIANCE_TOL: f64 = 0.05;
pub const LOSS_TOL: f64 = 0.05;
pub const SCALING_TOL: f64 = 0.07;
pub const LAPLACE_TOL: f64 = 0.02;
pub const OCCUPANCY_TOL: f64 = 0.15;

/// Stationary statistics of one bowl run, in the eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct BowlStats {
    pub eta: f64,
    pub batch_size: usize,
    pub variances: Vec<f64>,
    pub mean_loss: f64,
}

impl BowlStats {
    pub fn expected_variance(&self) -> f64 {
        self.eta / (2.0 * self.batch_size as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceRow {
    pub temperature: f64,
    pub quadrature_pa: f64,
    pub laplace_pa: f64,
    /// Relative error of the odds `p_A/p_B`.
    pub odds_error: f64,
}

#[derive(Debug, Clone)]
pub struct EquilibriumReport {
    pub base: BowlStats,
    pub doubled_eta: BowlStats,
    pub halved_batch: BowlStats,
    /// `(η/4S)·Tr(H)` for the base run.
    pub expected_loss: f64,
    pub laplace: Vec<LaplaceRow>,
    pub temperature: Temperature,
    pub occupancy: Occupancy,
    pub occupancy_quadrature_pa: f64,
    pub output: ExperimentOutput,
}

/// Samples the bowl under surrogate noise `C = H` and returns per-direction
/// variances of `z = Bᵀ(θ − θ*)` and the time-averaged loss.
pub fn bowl_stats(
    bowl: &QuadraticBowl,
    eta: f64,
    batch_size: usize,
    burn_in: u64,
    samples: usize,
    thin: u64,
    seed: u64,
    opts: RunOptions<'_>,
) -> Result<BowlStats> {
    let h = bowl.hessian();
    let noise = GradientNoiseModel::surrogate(batch_size, CovarianceSource::Fixed(factorize_covariance(&h)?));
    let path = sample_path(bowl, &noise, eta, bowl.center(), burn_in, samples, thin, seed, opts.cancel)?;
    if path.len() < 2 {
        return Err(LabError::invalid("too few bowl samples"));
    }
    Ok(summarize_bowl(bowl, &path, eta, batch_size))
}

fn summarize_bowl(bowl: &QuadraticBowl, path: &PathSamples, eta: f64, batch_size: usize) -> BowlStats {
    let q = bowl.dim();
    let n = path.len() as f64;
    let mut sum = vec![0.0; q];
    let mut sq = vec![0.0; q];
    let mut loss = 0.0;
    for theta in path.iter() {
        let z = bowl.to_eigen_coords(theta);
        for i in 0..q {
            sum[i] += z[i];
            sq[i] += z[i] * z[i];
        }
        loss += bowl.loss_raw(theta);
    }
    let variances = (0..q).map(|i| (sq[i] - sum[i] * sum[i] / n) / (n - 1.0)).collect();
    BowlStats { eta, batch_size, variances, mean_loss: loss / n }
}

fn rel(measured: f64, expected: f64) -> f64 {
    (measured - expected).abs() / expected.abs()
}

pub fn laplace_rows(cfg: &ExperimentConfig) -> Result<Vec<LaplaceRow>> {
    let well = build_well(cfg);
    let (a, b) = well_basins(&well)?;
    let gap = (b.loss - a.loss).abs();
    if !(gap > 0.0) {
        return Err(LabError::config("landscape.well", "Laplace check needs wells of different depth"));
    }
    let sep = Separatrix::for_well(&well);
    cfg.floats("equilibrium.laplace_fractions")
        .iter()
        .map(|&f| {
            let t = f * gap;
            let q = occupancy_from_quadrature(&BoltzmannDensity::for_well(&well, t)?, &sep)?;
            let odds = laplace_ratio(&a, &b, t)?;
            let quad_odds = q.p_a / q.p_b;
            Ok(LaplaceRow {
                temperature: t,
                quadrature_pa: q.p_a,
                laplace_pa: odds / (1.0 + odds),
                odds_error: rel(odds, quad_odds),
            })
        })
        .collect()
}

enum Job {
    Bowl(f64, usize, u64),
    Well,
}

enum JobResult {
    Bowl(BowlStats),
    Well(PathSamples),
}

pub fn run_equilibrium_suite(cfg: &ExperimentConfig, opts: RunOptions<'_>) -> Result<EquilibriumReport> {
    let bowl = build_bowl(cfg)?;
    let well = build_well(cfg);
    let seed = cfg.u64("experiment.seed");
    let eta = cfg.f64("equilibrium.eta");
    let s = cfg.usize("equilibrium.batch_size");
    if s < 2 {
        return Err(LabError::config("equilibrium.batch_size", "needs S >= 2 so it can be halved"));
    }
    let (w_eta, w_s, w_sigma2) =
        (cfg.f64("equilibrium.well_eta"), cfg.usize("equilibrium.well_batch_size"), cfg.f64("equilibrium.well_sigma2"));
    let temperature = Temperature::new(w_eta, w_sigma2, w_s)?;

    let jobs = vec![Job::Bowl(eta, s, seed), Job::Bowl(2.0 * eta, s, seed + 1), Job::Bowl(eta, s / 2, seed + 2), Job::Well];
    let results = par_map(jobs, opts.workers, |job| -> Result<JobResult> {
        match job {
            Job::Bowl(e, b, run_seed) => bowl_stats(
                &bowl,
                e,
                b,
                cfg.u64("equilibrium.burn_in"),
                cfg.usize("equilibrium.samples"),
                cfg.u64("equilibrium.thin"),
                run_seed,
                opts,
            )
            .map(JobResult::Bowl),
            Job::Well => {
                let noise = GradientNoiseModel::isotropic(w_s, w_sigma2);
                let start = ParameterVector::new(well.minimum_a().location.clone())?;
                sample_path(
                    &well,
                    &noise,
                    w_eta,
                    &start,
                    0,
                    cfg.usize("equilibrium.well_samples"),
                    cfg.u64("equilibrium.well_thin"),
                    seed,
                    opts.cancel,
                )
                .map(JobResult::Well)
            }
        }
    });
    let mut bowls = Vec::new();
    let mut path = None;
    for r in results {
        match r? {
            JobResult::Bowl(b) => bowls.push(b),
            JobResult::Well(p) => path = Some(p),
        }
    }
    let path = path.expect("well job present");
    let [base, doubled_eta, halved_batch]: [BowlStats; 3] = bowls.try_into().expect("three bowl jobs");
    let expected_loss = eta / (4.0 * s as f64) * bowl.hessian_trace();

    let laplace = laplace_rows(cfg)?;
    let sep = Separatrix::for_well(&well);
    let occupancy = basin_occupancy(&path, &sep, DEFAULT_BURN_IN)?;
    let occ_quad = occupancy_from_quadrature(&BoltzmannDensity::for_well(&well, temperature.density_temperature())?, &sep)?;
    let (ba, bb) = well_basins(&well)?;

    let mut out = ExperimentOutput::new("equilibrium", "check,item,measured,expected,rel_error,tolerance,passed");
    let mut row = |check: &str, item: String, m: f64, e: f64, err: f64, tol: f64| -> bool {
        let ok = err <= tol;
        out.summary_rows.push(format!("{check},{item},{m:?},{e:?},{err:?},{tol:?},{ok}"));
        ok
    };

    let ev = base.expected_variance();
    let mut var_ok = true;
    for (i, &v) in base.variances.iter().enumerate() {
        var_ok &= row("stationary_variance", format!("z{i}"), v, ev, rel(v, ev), VARIANCE_TOL);
    }
    let loss_err = rel(base.mean_loss, expected_loss);
    let loss_ok = row("expected_loss", "mean".into(), base.mean_loss, expected_loss, loss_err, LOSS_TOL);
    let mut eta_ok = true;
    let mut s_ok = true;
    for i in 0..base.variances.len() {
        let r = doubled_eta.variances[i] / base.variances[i];
        eta_ok &= row("double_eta", format!("z{i}"), r, 2.0, rel(r, 2.0), SCALING_TOL);
    }
    let s_factor = s as f64 / (s / 2) as f64;
    for i in 0..base.variances.len() {
        let r = halved_batch.variances[i] / base.variances[i];
        s_ok &= row("halve_batch", format!("z{i}"), r, s_factor, rel(r, s_factor), SCALING_TOL);
    }
    let mut lap_ok = true;
    for l in &laplace {
        lap_ok &= row("laplace", format!("T={:?}", l.temperature), l.laplace_pa, l.quadrature_pa, l.odds_error, LAPLACE_TOL);
    }
    let shrinking = laplace.windows(2).all(|w| w[1].temperature >= w[0].temperature || w[1].odds_error < w[0].odds_error);
    let mono = laplace.windows(2).all(|w| (w[1].temperature < w[0].temperature) == (w[1].quadrature_pa > w[0].quadrature_pa));
    let occ_err = rel(occupancy.p_a, occ_quad.p_a);
    let occ_ok = row("occupancy", "p_a".into(), occupancy.p_a, occ_quad.p_a, occ_err, OCCUPANCY_TOL) && occupancy.reliable;

    let worst_var = base.variances.iter().map(|&v| rel(v, ev)).fold(0.0, f64::max);
    out.check(Check::new("stationary-variance", var_ok, format!("max rel err {worst_var:.4} vs eta/2S = {ev:e}")));
    out.check(Check::new("expected-loss", loss_ok, format!("mean loss {:.6e} vs (eta/4S)Tr H = {expected_loss:.6e}", base.mean_loss)));
    out.check(Check::new("double-eta", eta_ok, "every direction's variance ratio within 7% of 2"));
    out.check(Check::new("halve-batch", s_ok, format!("every direction's variance ratio within 7% of {s_factor}")));
    out.check(Check::new(
        "laplace",
        lap_ok && shrinking,
        format!(
            "odds errors {} (must be <= {LAPLACE_TOL} and shrink with T)",
            laplace.iter().map(|l| format!("{:.4}", l.odds_error)).collect::<Vec<_>>().join(", ")
        ),
    ));
    out.check(Check::new("temperature-monotonicity", mono, "quadrature p_A rises as T falls"));
    out.check(Check::new(
        "sgd-occupancy",
        occ_ok,
        format!(
            "SGD p_A {:.4} vs quadrature {:.4} ({} transitions)",
            occupancy.p_a, occ_quad.p_a, occupancy.n_transitions
        ),
    ));

    let lap_at_run = laplace_ratio(&ba, &bb, temperature.density_temperature())?;
    out.files.push((
        "occupancy.csv".into(),
        occupancy_csv(&[OccupancyRow {
            temperature,
            occupancy,
            laplace_ratio: lap_at_run,
            quadrature_pa: occ_quad.p_a,
        }]),
    ));
    let mut r = String::new();
    writeln!(r, "bowl: q={} Tr(H)={:.6} eta={eta} S={s}", bowl.dim(), bowl.hessian_trace()).unwrap();
    writeln!(r, "well: eta={w_eta} S={w_s} sigma2={w_sigma2} T={} density T={}", temperature.value(), temperature.density_temperature()).unwrap();
    out.report.push(r.trim_end().to_string());

    out.charts.push((
        "stationary_variance".into(),
        Chart::new("stationary variance per direction", "Hessian eigenvalue", "var(z)", Style::Points)
            .with(Series::new("eta, S", pts(&bowl, &base)))
            .with(Series::new("2 eta, S", pts(&bowl, &doubled_eta)))
            .with(Series::new("eta, S/2", pts(&bowl, &halved_batch))),
    ));
    out.charts.push((
        "laplace".into(),
        Chart::new("basin A occupancy", "T", "p_A", Style::Lines)
            .with(Series::new("quadrature", laplace.iter().map(|l| (l.temperature, l.quadrature_pa)).collect()))
            .with(Series::new("Laplace", laplace.iter().map(|l| (l.temperature, l.laplace_pa)).collect())),
    ));
    out.truncated = opts.cancel.is_some_and(|c| c.load(std::sync::atomic::Ordering::Relaxed));

    Ok(EquilibriumReport {
        base,
        doubled_eta,
        halved_batch,
        expected_loss,
        laplace,
        temperature,
        occupancy,
        occupancy_quadrature_pa: occ_quad.p_a,
        output: out,
    })
}

fn pts(bowl: &QuadraticBowl, stats: &BowlStats) -> Vec<(f64, f64)> {
    bowl.hessian_eigenvalues().into_iter().zip(stats.variances.iter().copied()).collect()
}
