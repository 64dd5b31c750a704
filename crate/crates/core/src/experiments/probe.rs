//! Curvature probes at a trained (or loaded) point, checked against a dense
//! Hessian when the model is small enough.

use std::path::Path;

use nalgebra::DMatrix;

use crate::curvature::{
    covariance_hessian_distance, dense_hessian, probe_csv, spectral_probe, CovarianceHessianDistance, SpectralEstimate,
    DENSE_LIMIT,
};
use crate::dynamics::stream_rng;
use crate::error::{LabError, Result};
use crate::landscape::{read_checkpoint, ParameterVector};

use super::config::ExperimentConfig;
use super::output::{Check, ExperimentOutput};
use super::setup::{build_problem, probe_settings, run_cell, schedule, trajectory_spec, RunOptions};

pub const LAMBDA_TOL: f64 = 1e-3;
pub const SE_MULTIPLE: f64 = 2.0;

/// Dense-Hessian reference values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseReference {
    /// Eigenvalue of largest magnitude.
    pub lambda_max: f64,
    pub trace: f64,
    pub frobenius: f64,
    pub asymmetry: f64,
}

impl DenseReference {
    pub fn from_matrix(h: &DMatrix<f64>, asymmetry: f64) -> Self {
        let eig = h.clone().symmetric_eigen().eigenvalues;
        let lambda_max = eig.iter().copied().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        Self { lambda_max, trace: h.trace(), frobenius: h.norm(), asymmetry }
    }
}

pub struct ProbeReport {
    pub theta: ParameterVector,
    pub estimate: SpectralEstimate,
    pub dense: Option<DenseReference>,
    pub covariance_distance: Option<CovarianceHessianDistance>,
    /// The same distance at the initial point, when `probe.compare_init` is set.
    pub init_covariance_distance: Option<CovarianceHessianDistance>,
    pub output: ExperimentOutput,
}

/// Probes `probe.checkpoint` if set, otherwise the end of one trajectory
/// trained with the config's schedule and budget.
pub fn run_probe(cfg: &ExperimentConfig, opts: RunOptions<'_>) -> Result<ProbeReport> {
    let problem = build_problem(cfg)?;
    let land = problem.landscape.as_ref();
    let seed = cfg.u64("experiment.seed");
    let mut trained = None;
    let theta = match cfg.str("probe.checkpoint") {
        "" => {
            let spec = trajectory_spec(cfg, &problem, schedule(cfg), seed);
            let rec = run_cell(cfg, &problem, &spec, opts.cancel)?;
            if let Some(d) = rec.divergence {
                return Err(LabError::Diverged { step: d.step, epoch: d.epoch, reason: d.reason });
            }
            trained = Some((rec.last().epoch, rec.last().train_loss));
            rec.final_theta
        }
        path => {
            let ckpt = read_checkpoint(Path::new(path))?;
            if ckpt.kind != land.kind() {
                return Err(LabError::config("probe.checkpoint", format!("checkpoint is for {} landscapes", ckpt.kind)));
            }
            ckpt.parameters
        }
    };
    let settings = probe_settings(cfg, land);
    let estimate = spectral_probe(&settings, land, &theta, &mut stream_rng(seed, 2))?;

    let mut out = ExperimentOutput::new("probe", "quantity,estimate,std_error,dense");
    let (dense, covariance_distance) = if land.dim() <= DENSE_LIMIT {
        let d = dense_hessian(&settings.engine, land, &theta, DENSE_LIMIT)?;
        let r = DenseReference::from_matrix(&d.matrix, d.asymmetry);
        let cov = if land.num_examples() > 1 { Some(covariance_hessian_distance(&settings.engine, land, &theta)?) } else { None };
        (Some(r), cov)
    } else {
        (None, None)
    };
    let init_covariance_distance = if cfg.bool("probe.compare_init") && covariance_distance.is_some() {
        Some(covariance_hessian_distance(&settings.engine, land, &problem.init(seed))?)
    } else {
        None
    };

    let dense_col = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    out.summary_rows.push(format!(
        "lambda_max,{:?},,{}",
        estimate.lambda_max,
        dense_col(dense.map(|d| d.lambda_max))
    ));
    out.summary_rows.push(format!("trace,{:?},{:?},{}", estimate.trace, estimate.trace_se, dense_col(dense.map(|d| d.trace))));
    out.summary_rows.push(format!(
        "frobenius,{:?},{:?},{}",
        estimate.frobenius,
        estimate.frobenius_se,
        dense_col(dense.map(|d| d.frobenius))
    ));
    if let Some(c) = covariance_distance {
        out.summary_rows.push(format!("cov_hessian_rel_frobenius,{:?},,", c.rel_frobenius));
        out.summary_rows.push(format!("cov_hessian_trace_ratio,{:?},,", c.trace_ratio));
    }
    if let Some(c) = init_covariance_distance {
        out.summary_rows.push(format!("init_cov_hessian_rel_frobenius,{:?},,", c.rel_frobenius));
        out.summary_rows.push(format!("init_cov_hessian_trace_ratio,{:?},,", c.trace_ratio));
    }
    out.files.push(("probe.csv".into(), probe_csv(&[(0.0, estimate)])));
    out.report.push(format!(
        "q={} power iterations={} converged={}",
        estimate.q, estimate.iterations, estimate.converged
    ));
    if let Some((epoch, loss)) = trained {
        let excess = problem.teacher_loss.map(|t| format!(", {:.3e} above the teacher", loss - t)).unwrap_or_default();
        out.report.push(format!("trained to epoch {epoch:.3}: train loss {loss:.6}{excess}"));
    }
    if let (Some(end), Some(init)) = (covariance_distance, init_covariance_distance) {
        out.check(Check::new(
            "covariance-approaches-hessian",
            end.rel_frobenius < init.rel_frobenius,
            format!("|K - H|/|H| {:.4} at the endpoint vs {:.4} at init", end.rel_frobenius, init.rel_frobenius),
        ));
    }
    if let Some(d) = dense {
        let lam_err = (estimate.lambda_max - d.lambda_max).abs() / d.lambda_max.abs();
        out.check(Check::new("lambda-max", lam_err <= LAMBDA_TOL, format!("rel err {lam_err:.2e} vs dense {:.6}", d.lambda_max)));
        let tz = (estimate.trace - d.trace).abs() / estimate.trace_se.max(f64::MIN_POSITIVE);
        out.check(Check::new(
            "trace",
            (estimate.trace - d.trace).abs() <= SE_MULTIPLE * estimate.trace_se,
            format!("{:.5} +- {:.5} vs dense {:.5} ({tz:.2} se)", estimate.trace, estimate.trace_se, d.trace),
        ));
        let fz = (estimate.frobenius - d.frobenius).abs() / estimate.frobenius_se.max(f64::MIN_POSITIVE);
        out.check(Check::new(
            "frobenius",
            (estimate.frobenius - d.frobenius).abs() <= SE_MULTIPLE * estimate.frobenius_se,
            format!("{:.5} +- {:.5} vs dense {:.5} ({fz:.2} se)", estimate.frobenius, estimate.frobenius_se, d.frobenius),
        ));
        out.report.push(format!("dense asymmetry {:.3e}", d.asymmetry));
    } else {
        out.report.push(format!("q={} exceeds the dense limit; no dense comparison", land.dim()));
    }
    Ok(ProbeReport { theta, estimate, dense, covariance_distance, init_covariance_distance, output: out })
}
