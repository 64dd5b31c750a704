//! Grid cells shared by the sweep-style experiments.

use crate::curvature::SpectralEstimate;
use crate::dynamics::{interpolate, RunRecord, Schedule, TrajectorySpec};
use crate::error::Result;

use super::config::ExperimentConfig;
use super::output::opt;
use super::setup::{par_map, run_cell, trajectory_spec, Problem, RunOptions};
use super::stats::{mean, std_dev};

/// One trajectory of a grid.
#[derive(Debug, Clone)]
pub(crate) struct CellRun {
    pub label: String,
    pub schedule: Schedule,
    pub momentum: f64,
    pub seed: u64,
}

impl CellRun {
    pub fn constant(eta: f64, batch_size: usize, momentum: f64, seed: u64) -> Self {
        Self { label: cell_label(eta, batch_size), schedule: Schedule::constant(eta, batch_size), momentum, seed }
    }
}

pub(crate) fn cell_label(eta: f64, batch_size: usize) -> String {
    format!("eta{eta}_S{batch_size}")
}

/// Runs every cell on the worker pool. `adjust` edits each spec after the
/// config defaults are applied.
pub(crate) fn run_grid<F>(cfg: &ExperimentConfig, problem: &Problem, runs: &[CellRun], opts: RunOptions<'_>, adjust: F) -> Result<Vec<RunRecord>>
where
    F: Fn(&CellRun, &mut TrajectorySpec) + Sync,
{
    par_map(runs.iter().collect(), opts.workers, |run: &CellRun| {
        let mut spec = trajectory_spec(cfg, problem, run.schedule, run.seed);
        spec.momentum = run.momentum;
        adjust(run, &mut spec);
        run_cell(cfg, problem, &spec, opts.cancel)
    })
    .into_iter()
    .collect()
}

pub(crate) fn trajectory_file(run: &CellRun) -> String {
    format!("cells/{}/trajectory_{}.csv", run.label, run.seed)
}

/// Endpoint of one grid trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointRow {
    pub eta: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
    pub epoch: f64,
    pub train_loss: f64,
    pub train_acc: Option<f64>,
    pub val_acc: Option<f64>,
    pub probe: Option<SpectralEstimate>,
    pub diverged: bool,
}

pub(crate) const ENDPOINT_HEADER: &str =
    "eta,batch_size,ratio,momentum,seed,epoch,train_loss,train_acc,val_acc,lambda_max,trace,frob_per_q,diverged";

impl EndpointRow {
    /// Last finite record and the most recent probe of `rec`.
    pub(crate) fn from_record(run: &CellRun, rec: &RunRecord) -> Self {
        let last = rec.last_finite();
        Self {
            eta: run.schedule.eta_base,
            batch_size: run.schedule.s_base,
            momentum: run.momentum,
            seed: run.seed,
            epoch: last.epoch,
            train_loss: last.train_loss,
            train_acc: last.train_acc,
            val_acc: last.val_acc,
            probe: rec.rows.iter().rev().find_map(|r| r.probe),
            diverged: rec.diverged(),
        }
    }

    pub fn ratio(&self) -> f64 {
        self.eta / self.batch_size as f64
    }

    pub fn lambda_max(&self) -> Option<f64> {
        self.probe.map(|p| p.lambda_max)
    }

    pub fn trace(&self) -> Option<f64> {
        self.probe.map(|p| p.trace)
    }

    pub fn frobenius_per_param(&self) -> Option<f64> {
        self.probe.map(|p| p.frobenius_per_param())
    }

    pub(crate) fn csv(&self) -> String {
        format!(
            "{:?},{},{:?},{:?},{},{:?},{:?},{},{},{},{},{},{}",
            self.eta,
            self.batch_size,
            self.ratio(),
            self.momentum,
            self.seed,
            self.epoch,
            self.train_loss,
            opt(self.train_acc),
            opt(self.val_acc),
            opt(self.lambda_max()),
            opt(self.trace()),
            opt(self.frobenius_per_param()),
            self.diverged
        )
    }
}

/// Seed-mean log-loss curve on the epochs of the first record. Epochs not
/// reached by every non-diverged seed are dropped, as are diverged seeds.
/// The second component is the seed standard deviation at each epoch.
pub(crate) fn mean_log_curve(records: &[&RunRecord]) -> Vec<(f64, f64, f64)> {
    let curves: Vec<Vec<(f64, f64)>> = records
        .iter()
        .filter(|r| !r.diverged())
        .map(|r| r.loss_curve().into_iter().map(|(e, l)| (e, l.ln())).collect())
        .collect();
    let Some(first) = curves.first() else {
        return Vec::new();
    };
    first
        .iter()
        .filter_map(|&(e, _)| {
            let vals: Option<Vec<f64>> = curves.iter().map(|c| interpolate(c, e)).collect();
            vals.map(|v| (e, mean(&v), std_dev(&v)))
        })
        .collect()
}

/// Mean and sample standard deviation, or `None` for an empty slice.
pub(crate) fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    (!xs.is_empty()).then(|| (mean(xs), std_dev(xs)))
}
