//! Loss along the straight line between two parameter vectors.

use std::fmt::Write as _;
use std::path::Path;

use crate::dynamics::Schedule;
use crate::error::{LabError, Result};
use crate::landscape::{read_checkpoint, Landscape, ParameterVector};

use super::chart::{Chart, Series, Style};
use super::config::ExperimentConfig;
use super::output::{opt, Check, ExperimentOutput};
use super::setup::{build_problem, par_map, run_cell, trajectory_spec, Problem, RunOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolationPoint {
    pub alpha: f64,
    pub train_loss: f64,
    pub train_acc: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

/// Evaluates `θ(α) = (1−α)θ₁ + αθ₂` at each `α`.
pub fn run_interpolation(
    landscape: &dyn Landscape,
    theta1: &ParameterVector,
    theta2: &ParameterVector,
    alphas: &[f64],
) -> Result<Vec<InterpolationPoint>> {
    if theta1.len() != landscape.dim() || theta2.len() != landscape.dim() {
        return Err(LabError::DimensionMismatch { expected: landscape.dim(), got: theta1.len().max(theta2.len()) });
    }
    alphas
        .iter()
        .map(|&alpha| {
            let theta = theta1.lerp(theta2, alpha)?;
            let val = landscape.validation(&theta);
            Ok(InterpolationPoint {
                alpha,
                train_loss: landscape.loss_raw(&theta),
                train_acc: landscape.train_accuracy(&theta),
                val_loss: val.map(|v| v.loss),
                val_acc: val.map(|v| v.accuracy),
            })
        })
        .collect()
}

pub fn alpha_grid(min: f64, max: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![min];
    }
    (0..points).map(|i| min + (max - min) * i as f64 / (points - 1) as f64).collect()
}

pub struct InterpolationReport {
    pub theta_a: ParameterVector,
    pub theta_b: ParameterVector,
    pub points: Vec<InterpolationPoint>,
    pub output: ExperimentOutput,
}

fn endpoint(cfg: &ExperimentConfig, problem: &Problem, ckpt_key: &str, cell_key: &str, opts: RunOptions<'_>) -> Result<ParameterVector> {
    let land = problem.landscape.as_ref();
    match cfg.str(ckpt_key) {
        "" => {
            let &(eta, s) = cfg
                .cells(cell_key)
                .first()
                .ok_or_else(|| LabError::config(cell_key, "needs one eta/S cell when no checkpoint is given"))?;
            let spec = trajectory_spec(cfg, problem, Schedule::constant(eta, s), cfg.u64("experiment.seed"));
            let rec = run_cell(cfg, problem, &spec, opts.cancel)?;
            if let Some(d) = rec.divergence {
                return Err(LabError::Diverged { step: d.step, epoch: d.epoch, reason: d.reason });
            }
            Ok(rec.final_theta)
        }
        path => {
            let c = read_checkpoint(Path::new(path))?;
            if c.kind != land.kind() {
                return Err(LabError::config(ckpt_key, format!("checkpoint is for {} landscapes", c.kind)));
            }
            Ok(c.parameters)
        }
    }
}

/// Trains (or loads) the two endpoints and scans the line between them.
pub fn run_interpolation_experiment(cfg: &ExperimentConfig, opts: RunOptions<'_>) -> Result<InterpolationReport> {
    let (lo, hi) = (cfg.f64("interpolation.alpha_min"), cfg.f64("interpolation.alpha_max"));
    if lo > -0.25 || hi < 1.25 {
        return Err(LabError::config("interpolation.alpha_min", "alpha grid must cover at least [-0.25, 1.25]"));
    }
    let problem = build_problem(cfg)?;
    let ends = par_map(vec![("interpolation.checkpoint_a", "interpolation.cell_a"), ("interpolation.checkpoint_b", "interpolation.cell_b")], opts.workers, |(c, k)| {
        endpoint(cfg, &problem, c, k, opts)
    });
    let [a, b]: [Result<ParameterVector>; 2] = ends.try_into().map_err(|_| LabError::invalid("two endpoints expected"))?;
    let (theta_a, theta_b) = (a?, b?);
    let land = problem.landscape.as_ref();
    let mut alphas = alpha_grid(lo, hi, cfg.usize("interpolation.points"));
    for x in [0.0, 1.0] {
        if !alphas.contains(&x) {
            alphas.push(x);
        }
    }
    alphas.sort_by(f64::total_cmp);
    let points = run_interpolation(land, &theta_a, &theta_b, &alphas)?;

    let mut out = ExperimentOutput::new("interpolation", "alpha,train_loss,train_acc,val_loss,val_acc");
    for p in &points {
        out.summary_rows.push(format!("{:?},{:?},{},{},{}", p.alpha, p.train_loss, opt(p.train_acc), opt(p.val_loss), opt(p.val_acc)));
    }
    let at = |x: f64| points.iter().find(|p| p.alpha == x).map(|p| p.train_loss);
    let ends_ok = at(0.0) == Some(land.loss_raw(&theta_a)) && at(1.0) == Some(land.loss_raw(&theta_b));
    out.check(Check::new("endpoints", ends_ok, "alpha = 0 and 1 reproduce the endpoint losses exactly"));
    let mut r = String::new();
    write!(r, "distance |theta_b - theta_a| = {:.6}", theta_a.iter().zip(theta_b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()).unwrap();
    out.report.push(r);
    out.charts.push((
        "interpolation".into(),
        Chart::new("loss along the line", "alpha", "loss", Style::Lines)
            .with(Series::new("train loss", points.iter().map(|p| (p.alpha, p.train_loss)).collect()))
            .with(Series::new("val loss", points.iter().filter_map(|p| p.val_loss.map(|v| (p.alpha, v))).collect())),
    ));
    Ok(InterpolationReport { theta_a, theta_b, points, output: out })
}
