//! Constant against cyclic schedules, measured at each run's best
//! validation point.

use crate::dynamics::{curve_distance, Budget, RunRecord, Schedule, ScheduleKind};
use crate::error::Result;

use super::chart::{Chart, Series, Style};
use super::config::ExperimentConfig;
use super::grid::{mean_log_curve, mean_std, run_grid, CellRun};
use super::output::{opt, Check, ExperimentOutput};
use super::setup::{build_problem, schedule, RunOptions};
use super::stats::{mean, pooled_std};

/// Seed-noise multiple allowed between the two discrete schedules.
const EXCHANGE_SE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CyclicRow {
    pub schedule: ScheduleKind,
    pub seed: u64,
    pub best_epoch: f64,
    pub train_loss: f64,
    pub val_acc: Option<f64>,
    pub lambda_max: Option<f64>,
    pub frobenius_per_param: Option<f64>,
    pub diverged: bool,
}

/// Mean and standard deviation over the non-diverged seeds of one schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleSummary {
    pub schedule: ScheduleKind,
    pub seeds: usize,
    pub lambda_max: (f64, f64),
    pub frobenius_per_param: (f64, f64),
    pub train_loss: (f64, f64),
    pub val_acc: (f64, f64),
}

pub struct CyclicReport {
    pub rows: Vec<CyclicRow>,
    pub table: Vec<ScheduleSummary>,
    pub output: ExperimentOutput,
}

/// The four compared schedules around `(α, S) = (schedule.eta_base,
/// schedule.s_base)` with max/min `cyclic.ratio`. The cyclic batch-size
/// schedule runs at `ratio·α` so its `η/S` range matches the learning-rate
/// schedules.
pub fn comparison_schedules(cfg: &ExperimentConfig) -> Vec<Schedule> {
    let base = schedule(cfg);
    let (alpha, s, r) = (base.eta_base, base.s_base, cfg.f64("cyclic.ratio"));
    let s_max = (r * s as f64).round() as usize;
    let with = |kind, eta_base, eta_max, s_max| Schedule { kind, eta_base, eta_max, s_base: s, s_max, cycle_length: base.cycle_length };
    vec![
        with(ScheduleKind::Constant, alpha, r * alpha, s_max),
        with(ScheduleKind::DiscreteCyclicLr, alpha, r * alpha, s),
        with(ScheduleKind::DiscreteCyclicBs, r * alpha, r * alpha, s_max),
        with(ScheduleKind::TriangularLr, alpha, r * alpha, s),
    ]
}

fn best_row(rec: &RunRecord) -> &crate::dynamics::RecordRow {
    rec.rows
        .iter()
        .filter(|r| !r.diverged)
        .fold(None, |best: Option<&crate::dynamics::RecordRow>, r| match (best, r.val_acc) {
            (Some(b), Some(v)) if v <= b.val_acc.unwrap_or(f64::NEG_INFINITY) => Some(b),
            _ => Some(r),
        })
        .unwrap_or(&rec.rows[0])
}

/// Trains every schedule for `experiment.seeds` seeds, finds the record
/// with the highest validation accuracy and replays the run to exactly that
/// step to probe curvature there.
pub fn run_cyclic_comparison(cfg: &ExperimentConfig, opts: RunOptions<'_>) -> Result<CyclicReport> {
    let problem = build_problem(cfg)?;
    let n = problem.landscape.num_examples();
    let schedules = comparison_schedules(cfg);
    for s in &schedules {
        s.validate()?;
        if s.max_batch_size() > n {
            return Err(crate::error::LabError::config("cyclic.ratio", format!("batch size {} exceeds N={n}", s.max_batch_size())));
        }
    }
    let momentum = cfg.f64("schedule.momentum");
    let base_seed = cfg.u64("experiment.seed");
    let seeds: Vec<u64> = (0..cfg.u64("experiment.seeds")).map(|i| base_seed + i).collect();
    let runs: Vec<CellRun> = schedules
        .iter()
        .flat_map(|&schedule| {
            seeds.iter().map(move |&seed| CellRun { label: schedule.kind.as_str().to_string(), schedule, momentum, seed })
        })
        .collect();
    let first = run_grid(cfg, &problem, &runs, opts, |_, spec| {
        spec.probe_epochs.clear();
        spec.probe_final = false;
    })?;
    let best_steps: Vec<u64> = first.iter().map(|r| best_row(r).step).collect();
    let replay = run_grid(cfg, &problem, &runs, opts, |run, spec| {
        let i = runs.iter().position(|r| r.label == run.label && r.seed == run.seed).expect("run is in the grid");
        spec.budget = Budget::Steps(best_steps[i]);
        spec.probe_epochs.clear();
        spec.probe_final = true;
        spec.stop_at_train_accuracy = None;
        spec.stop_at_train_loss = None;
    })?;

    let mut out = ExperimentOutput::new("cyclic", "schedule,seed,best_epoch,train_loss,val_acc,lambda_max,frob_per_q,diverged");
    let mut rows = Vec::new();
    for ((run, rec), again) in runs.iter().zip(&first).zip(&replay) {
        let best = best_row(rec);
        let probe = again.last().probe;
        let row = CyclicRow {
            schedule: run.schedule.kind,
            seed: run.seed,
            best_epoch: best.epoch,
            train_loss: best.train_loss,
            val_acc: best.val_acc,
            lambda_max: probe.map(|p| p.lambda_max),
            frobenius_per_param: probe.map(|p| p.frobenius_per_param()),
            diverged: rec.diverged(),
        };
        out.summary_rows.push(format!(
            "{},{},{:?},{:?},{},{},{},{}",
            run.schedule.kind.as_str(),
            row.seed,
            row.best_epoch,
            row.train_loss,
            opt(row.val_acc),
            opt(row.lambda_max),
            opt(row.frobenius_per_param),
            row.diverged
        ));
        out.files.push((format!("cells/{}/trajectory_{}.csv", run.label, run.seed), rec.to_csv()));
        rows.push(row);
    }

    let values = |kind: ScheduleKind, f: &dyn Fn(&CyclicRow) -> Option<f64>| -> Vec<f64> {
        rows.iter().filter(|r| r.schedule == kind && !r.diverged).filter_map(f).collect()
    };
    let ms = |v: &[f64]| mean_std(v).unwrap_or((f64::NAN, f64::NAN));
    let table: Vec<ScheduleSummary> = schedules
        .iter()
        .map(|s| ScheduleSummary {
            schedule: s.kind,
            seeds: rows.iter().filter(|r| r.schedule == s.kind && !r.diverged).count(),
            lambda_max: ms(&values(s.kind, &|r| r.lambda_max)),
            frobenius_per_param: ms(&values(s.kind, &|r| r.frobenius_per_param)),
            train_loss: ms(&values(s.kind, &|r| Some(r.train_loss))),
            val_acc: ms(&values(s.kind, &|r| r.val_acc)),
        })
        .collect();
    let mut table_csv = String::from("schedule,seeds,lambda_max_mean,lambda_max_std,frob_per_q_mean,frob_per_q_std,train_loss_mean,train_loss_std,val_acc_mean,val_acc_std\n");
    for t in &table {
        table_csv.push_str(&format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            t.schedule.as_str(),
            t.seeds,
            t.lambda_max.0,
            t.lambda_max.1,
            t.frobenius_per_param.0,
            t.frobenius_per_param.1,
            t.train_loss.0,
            t.train_loss.1,
            t.val_acc.0,
            t.val_acc.1
        ));
        out.report.push(format!(
            "{:<20} lambda_max {:.4} +- {:.4}  frob/q {:.3e} +- {:.1e}  loss {:.4}  val acc {:.4} +- {:.4}  ({} seeds)",
            t.schedule.as_str(),
            t.lambda_max.0,
            t.lambda_max.1,
            t.frobenius_per_param.0,
            t.frobenius_per_param.1,
            t.train_loss.0,
            t.val_acc.0,
            t.val_acc.1,
            t.seeds
        ));
    }
    out.files.push(("table.csv".into(), table_csv));

    let constant = &table[0];
    for t in &table[1..] {
        let name = t.schedule.as_str();
        out.check(Check::new(
            format!("{name}-lambda-max-below-constant"),
            t.lambda_max.0 < constant.lambda_max.0,
            format!("{:.4} vs constant {:.4}", t.lambda_max.0, constant.lambda_max.0),
        ));
        out.check(Check::new(
            format!("{name}-frobenius-below-constant"),
            t.frobenius_per_param.0 < constant.frobenius_per_param.0,
            format!("{:.4e} vs constant {:.4e}", t.frobenius_per_param.0, constant.frobenius_per_param.0),
        ));
    }

    // Cyclic learning rate against cyclic batch size.
    let (lr, bs) = (ScheduleKind::DiscreteCyclicLr, ScheduleKind::DiscreteCyclicBs);
    for (name, f) in [
        ("lambda-max", &(|r: &CyclicRow| r.lambda_max) as &dyn Fn(&CyclicRow) -> Option<f64>),
        ("frobenius", &|r: &CyclicRow| r.frobenius_per_param),
    ] {
        let (a, b) = (values(lr, f), values(bs, f));
        let gap = (mean(&a) - mean(&b)).abs();
        let pooled = pooled_std(&[a, b]);
        out.check(Check::new(
            format!("discrete-lr-vs-bs-{name}"),
            gap <= EXCHANGE_SE * pooled,
            format!("gap {gap:.4e} vs {EXCHANGE_SE} x pooled std {pooled:.4e}"),
        ));
    }
    let group = |kind: ScheduleKind| -> Vec<&RunRecord> { runs.iter().zip(&first).filter(|(r, _)| r.schedule.kind == kind).map(|(_, rec)| rec).collect() };
    let (clr, cbs) = (mean_log_curve(&group(lr)), mean_log_curve(&group(bs)));
    let exp = |c: &[(f64, f64, f64)]| -> Vec<(f64, f64)> { c.iter().map(|&(e, m, _)| (e, m.exp())).collect() };
    let envelope = cfg.f64("rescaling.envelope") * mean(&clr.iter().map(|p| p.2).collect::<Vec<_>>());
    let distance = curve_distance(&exp(&clr), &exp(&cbs));
    out.check(Check::new(
        "discrete-lr-vs-bs-loss-curves",
        distance <= envelope,
        format!("mean |d log loss| {distance:.4} vs envelope {envelope:.4}"),
    ));

    let mut chart = Chart::new("seed-mean training loss", "epoch", "mean log loss", Style::Lines);
    for s in &schedules {
        let c = mean_log_curve(&group(s.kind));
        chart = chart.with(Series::new(s.kind.as_str(), c.iter().map(|&(e, m, _)| (e, m)).collect()));
    }
    out.charts.push(("loss_curves".into(), chart));
    out.truncated = first.iter().chain(&replay).any(|r| r.truncated);
    Ok(CyclicReport { rows, table, output: out })
}
