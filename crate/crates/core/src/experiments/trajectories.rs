//! Plain seeded trajectories of the configured problem.

use std::sync::atomic::Ordering;

use crate::dynamics::RunRecord;
use crate::error::Result;
use crate::landscape::Checkpoint;

use super::chart::{Chart, Series, Style};
use super::config::ExperimentConfig;
use super::output::{opt, Check, ExperimentOutput};
use super::setup::{build_problem, par_map, run_cell, schedule, trajectory_spec, RunOptions};

pub const TRAJECTORY_SUMMARY_HEADER: &str =
    "seed,epoch,step,train_loss,train_acc,val_loss,val_acc,diverged,lambda_max,trace_h,frob_per_q";

pub struct TrajectoryReport {
    pub records: Vec<RunRecord>,
    pub output: ExperimentOutput,
}

/// Endpoint columns shared by the summary tables.
pub(crate) fn endpoint_fields(rec: &RunRecord) -> String {
    let last = rec.last_finite();
    let probe = rec.rows.iter().rev().find_map(|r| r.probe.as_ref());
    format!(
        "{:?},{},{:?},{},{},{},{},{},{},{}",
        last.epoch,
        last.step,
        last.train_loss,
        opt(last.train_acc),
        opt(last.val_loss),
        opt(last.val_acc),
        rec.diverged(),
        opt(probe.map(|p| p.lambda_max)),
        opt(probe.map(|p| p.trace)),
        opt(probe.map(|p| p.frobenius_per_param())),
    )
}

/// Seeds `seed .. seed + seeds` of the configured trajectory.
pub fn run_trajectories(cfg: &ExperimentConfig, opts: RunOptions<'_>) -> Result<TrajectoryReport> {
    let problem = build_problem(cfg)?;
    let base = cfg.u64("experiment.seed");
    let seeds: Vec<u64> = (0..cfg.u64("experiment.seeds")).map(|i| base + i).collect();
    let records = par_map(seeds, opts.workers, |seed| {
        let spec = trajectory_spec(cfg, &problem, schedule(cfg), seed);
        run_cell(cfg, &problem, &spec, opts.cancel)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut out = ExperimentOutput::new("trajectory", TRAJECTORY_SUMMARY_HEADER);
    let mut chart = Chart::new("training loss", "epoch", "log loss", Style::Lines);
    for rec in &records {
        out.summary_rows.push(format!("{},{}", rec.seed, endpoint_fields(rec)));
        out.files.push((format!("trajectory_{}.csv", rec.seed), rec.to_csv()));
        out.files.push((
            format!("checkpoint_{}.txt", rec.seed),
            Checkpoint { kind: problem.landscape.kind(), parameters: rec.final_theta.clone() }.to_text(),
        ));
        chart = chart.with(Series::new(format!("seed {}", rec.seed), rec.loss_curve().into_iter().map(|(e, l)| (e, l.ln())).collect()));
        let detail = match &rec.divergence {
            Some(d) => format!("diverged at step {} (epoch {:.3}): {}", d.step, d.epoch, d.reason),
            None => format!("final train loss {:.6}", rec.last().train_loss),
        };
        out.check(Check::new(format!("seed-{}", rec.seed), !rec.diverged(), detail));
    }
    out.charts.push(("loss".into(), chart));
    out.truncated = records.iter().any(|r| r.truncated) || opts.cancel.is_some_and(|c| c.load(Ordering::Relaxed));
    Ok(TrajectoryReport { records, output: out })
}

