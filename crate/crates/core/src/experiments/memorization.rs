//! Training to full memorisation of partly random labels across `η/S`
//! cells, with and without momentum.

use crate::error::Result;

use super::chart::{Chart, Series, Style};
use super::config::ExperimentConfig;
use super::grid::{run_grid, trajectory_file, CellRun, EndpointRow};
use super::output::{opt, Check, ExperimentOutput};
use super::setup::{build_problem, RunOptions};
use super::sweep::rank_correlation;

#[derive(Debug, Clone, PartialEq)]
pub struct MemorizationRow {
    pub fraction: f64,
    pub endpoint: EndpointRow,
    /// Train accuracy reached `memorization.train_acc` within the budget.
    pub memorized: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCorrelation {
    pub fraction: f64,
    pub momentum: f64,
    pub memorized: usize,
    pub val_acc: Option<f64>,
    pub frobenius: Option<f64>,
}

pub struct MemorizationReport {
    pub rows: Vec<MemorizationRow>,
    /// Spearman of `η/S` against validation accuracy over all memorised runs.
    pub val_acc_corr: Option<f64>,
    /// Spearman of `η/S` against Frobenius norm per parameter.
    pub frobenius_corr: Option<f64>,
    pub groups: Vec<GroupCorrelation>,
    pub output: ExperimentOutput,
}

/// Every `(fraction, momentum, cell, seed)` of the memorisation grid. Each
/// fraction gets its own dataset, corrupted from the same clean draw.
pub fn run_memorization(cfg: &ExperimentConfig, opts: RunOptions<'_>) -> Result<MemorizationReport> {
    let threshold = cfg.f64("memorization.train_acc");
    let base_seed = cfg.u64("experiment.seed");
    let seeds: Vec<u64> = (0..cfg.u64("experiment.seeds")).map(|i| base_seed + i).collect();
    let cells = cfg.cells("memorization.cells");
    let momenta = cfg.floats("memorization.momenta").to_vec();

    let mut out = ExperimentOutput::new(
        "memorization",
        "fraction,momentum,eta,batch_size,ratio,seed,memorized,epochs,train_acc,val_acc,lambda_max,trace,frob_per_q,diverged",
    );
    let mut rows = Vec::new();
    let mut truncated = false;
    let mut excluded = Vec::new();
    for &fraction in cfg.floats("memorization.fractions") {
        let mut sub = cfg.clone();
        sub.set("dataset.corrupt_fraction", &format!("{fraction:?}"))?;
        let problem = build_problem(&sub)?;
        let n = problem.landscape.num_examples();
        let mut runs = Vec::new();
        for &momentum in &momenta {
            for &(eta, s) in &cells {
                if s > n {
                    excluded.push(format!("eta{eta}_S{s}: batch size exceeds N={n}"));
                    continue;
                }
                for &seed in &seeds {
                    let mut run = CellRun::constant(eta, s, momentum, seed);
                    run.label = format!("f{fraction}_mu{momentum}_{}", run.label);
                    runs.push(run);
                }
            }
        }
        let records = run_grid(&sub, &problem, &runs, opts, |_, spec| {
            spec.stop_at_train_accuracy = Some(threshold);
            spec.probe_final = true;
        })?;
        for (run, rec) in runs.iter().zip(&records) {
            let endpoint = EndpointRow::from_record(run, rec);
            let memorized = !endpoint.diverged && endpoint.train_acc.is_some_and(|a| a >= threshold);
            if endpoint.diverged {
                excluded.push(format!("{} seed {}: diverged", run.label, run.seed));
            } else if !memorized {
                excluded.push(format!("{} seed {}: not memorised by epoch {:.1}", run.label, run.seed, endpoint.epoch));
            }
            out.summary_rows.push(format!(
                "{fraction:?},{:?},{:?},{},{:?},{},{memorized},{:?},{},{},{},{},{},{}",
                endpoint.momentum,
                endpoint.eta,
                endpoint.batch_size,
                endpoint.ratio(),
                endpoint.seed,
                endpoint.epoch,
                opt(endpoint.train_acc),
                opt(endpoint.val_acc),
                opt(endpoint.lambda_max()),
                opt(endpoint.trace()),
                opt(endpoint.frobenius_per_param()),
                endpoint.diverged
            ));
            out.files.push((trajectory_file(run), rec.to_csv()));
            rows.push(MemorizationRow { fraction, endpoint, memorized });
        }
        truncated |= records.iter().any(|r| r.truncated);
    }

    let memorized: Vec<&EndpointRow> = rows.iter().filter(|r| r.memorized).map(|r| &r.endpoint).collect();
    let val_acc_corr = rank_correlation(&memorized, |r| r.val_acc);
    let frobenius_corr = rank_correlation(&memorized, EndpointRow::frobenius_per_param);
    let mut groups = Vec::new();
    for &fraction in cfg.floats("memorization.fractions") {
        for &momentum in &momenta {
            let g: Vec<&EndpointRow> = rows
                .iter()
                .filter(|r| r.memorized && r.fraction == fraction && r.endpoint.momentum == momentum)
                .map(|r| &r.endpoint)
                .collect();
            groups.push(GroupCorrelation {
                fraction,
                momentum,
                memorized: g.len(),
                val_acc: rank_correlation(&g, |r| r.val_acc),
                frobenius: rank_correlation(&g, EndpointRow::frobenius_per_param),
            });
        }
    }

    let fmt_corr = |c: Option<f64>| c.map_or_else(|| "undefined".to_string(), |v| format!("{v:+.3}"));
    out.report.push(format!("{} of {} runs memorised (train accuracy >= {threshold})", memorized.len(), rows.len()));
    for g in &groups {
        out.report.push(format!(
            "fraction {} momentum {}: {} memorised, Spearman vs eta/S: val acc {}, frobenius/q {}",
            g.fraction,
            g.momentum,
            g.memorized,
            fmt_corr(g.val_acc),
            fmt_corr(g.frobenius)
        ));
    }
    out.check(Check::new(
        "val-acc-vs-ratio",
        val_acc_corr.is_some_and(|c| c > 0.0),
        format!("Spearman {} over memorised runs (need > 0)", fmt_corr(val_acc_corr)),
    ));
    out.check(Check::new(
        "frobenius-vs-ratio",
        frobenius_corr.is_some_and(|c| c < 0.0),
        format!("Spearman {} over memorised runs (need < 0)", fmt_corr(frobenius_corr)),
    ));
    out.report.extend(excluded.iter().map(|e| format!("excluded {e}")));

    let series = |f: &dyn Fn(&EndpointRow) -> Option<f64>| -> Vec<Series> {
        groups
            .iter()
            .map(|g| {
                let pts = rows
                    .iter()
                    .filter(|r| r.memorized && r.fraction == g.fraction && r.endpoint.momentum == g.momentum)
                    .filter_map(|r| f(&r.endpoint).map(|v| (r.endpoint.ratio(), v)))
                    .collect();
                Series::new(format!("fraction {} momentum {}", g.fraction, g.momentum), pts)
            })
            .collect()
    };
    let mut val_chart = Chart::new("validation accuracy after memorisation", "eta/S", "val acc", Style::Points).log_x();
    for s in series(&|r| r.val_acc) {
        val_chart = val_chart.with(s);
    }
    let mut frob_chart = Chart::new("Hessian Frobenius norm per parameter", "eta/S", "frobenius/q", Style::Points).log_x();
    for s in series(&EndpointRow::frobenius_per_param) {
        frob_chart = frob_chart.with(s);
    }
    out.charts.push(("val_acc_vs_ratio".into(), val_chart));
    out.charts.push(("frobenius_vs_ratio".into(), frob_chart));
    out.truncated = truncated;
    Ok(MemorizationReport { rows, val_acc_corr, frobenius_corr, groups, output: out })
}
