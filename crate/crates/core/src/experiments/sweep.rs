//! Endpoint curvature and validation accuracy across an `(η, S)` grid,
//! ranked against `η/S`.

use crate::error::Result;

use super::chart::{Chart, Series, Style};
use super::config::ExperimentConfig;
use super::grid::{cell_label, mean_std, run_grid, trajectory_file, CellRun, EndpointRow, ENDPOINT_HEADER};
use super::output::{Check, ExperimentOutput};
use super::setup::{build_problem, RunOptions};
use super::stats::{pooled_std, spearman};

/// Two ratios closer than this (relative) count as equal.
const RATIO_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub endpoint: EndpointRow,
    /// Not diverged and final train accuracy at or above `sweep.train_acc`.
    pub converged: bool,
}

/// Spearman correlations of `η/S` against each endpoint metric over
/// converged rows; `None` when undefined.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RankCorrelations {
    pub lambda_max: Option<f64>,
    pub trace: Option<f64>,
    pub frobenius: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqualRatioCell {
    pub eta: f64,
    pub batch_size: usize,
    pub converged_seeds: usize,
    pub mean_val_acc: f64,
    pub std_val_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EqualRatioCheck {
    pub ratio: f64,
    pub cells: Vec<EqualRatioCell>,
    pub max_gap: f64,
    pub pooled_std: f64,
    pub passed: bool,
}

pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub correlations: RankCorrelations,
    pub equal_ratio: Option<EqualRatioCheck>,
    /// Rows left out of the rank statistics, with the reason.
    pub excluded: Vec<String>,
    pub output: ExperimentOutput,
}

fn same_ratio(a: f64, b: f64) -> bool {
    (a - b).abs() <= RATIO_EPS * a.abs().max(b.abs())
}

/// Spearman of `η/S` against `metric` over the rows where it is defined.
pub fn rank_correlation(rows: &[&EndpointRow], metric: impl Fn(&EndpointRow) -> Option<f64>) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|r| metric(r).map(|m| (r.ratio(), m))).unzip();
    spearman(&x, &y)
}

/// The first ratio shared by at least three grid cells, ties broken by the
/// number of cells and then by grid order.
fn equal_ratio_cells(cells: &[(f64, usize)]) -> Vec<(f64, usize)> {
    let mut best: Vec<(f64, usize)> = Vec::new();
    for &(eta, s) in cells {
        let r = eta / s as f64;
        let group: Vec<(f64, usize)> = cells.iter().copied().filter(|&(e, b)| same_ratio(e / b as f64, r)).collect();
        if group.len() >= 3 && group.len() > best.len() {
            best = group;
        }
    }
    best
}

/// Runs the grid `sweep.etas × sweep.batch_sizes` (plus any
/// `sweep.equal_ratio_cells`) for `experiment.seeds` seeds with a final
/// curvature probe.
pub fn run_ratio_sweep(cfg: &ExperimentConfig, opts: RunOptions<'_>) -> Result<SweepResult> {
    let problem = build_problem(cfg)?;
    let momentum = cfg.f64("schedule.momentum");
    let base_seed = cfg.u64("experiment.seed");
    let seeds: Vec<u64> = (0..cfg.u64("experiment.seeds")).map(|i| base_seed + i).collect();
    let n = problem.landscape.num_examples();

    let mut cells: Vec<(f64, usize)> = Vec::new();
    for &eta in cfg.floats("sweep.etas") {
        for s in cfg.ints("sweep.batch_sizes") {
            cells.push((eta, s));
        }
    }
    for c in cfg.cells("sweep.equal_ratio_cells") {
        if !cells.contains(&c) {
            cells.push(c);
        }
    }
    let mut excluded = Vec::new();
    cells.retain(|&(eta, s)| {
        let ok = s <= n;
        if !ok {
            excluded.push(format!("{}: batch size exceeds N={n}", cell_label(eta, s)));
        }
        ok
    });

    let runs: Vec<CellRun> =
        cells.iter().flat_map(|&(eta, s)| seeds.iter().map(move |&seed| CellRun::constant(eta, s, momentum, seed))).collect();
    let records = run_grid(cfg, &problem, &runs, opts, |_, spec| spec.probe_final = true)?;

    let threshold = cfg.f64("sweep.train_acc");
    let mut out = ExperimentOutput::new("sweep", &format!("{ENDPOINT_HEADER},converged"));
    let mut rows = Vec::with_capacity(runs.len());
    for (run, rec) in runs.iter().zip(&records) {
        let endpoint = EndpointRow::from_record(run, rec);
        let converged = !endpoint.diverged && endpoint.train_acc.is_some_and(|a| a >= threshold);
        if endpoint.diverged {
            excluded.push(format!("{} seed {}: diverged", run.label, run.seed));
        } else if !converged {
            excluded.push(format!(
                "{} seed {}: train accuracy {:.4} below {threshold}",
                run.label,
                run.seed,
                endpoint.train_acc.unwrap_or(f64::NAN)
            ));
        }
        out.summary_rows.push(format!("{},{converged}", endpoint.csv()));
        out.files.push((trajectory_file(run), rec.to_csv()));
        rows.push(SweepRow { endpoint, converged });
    }

    let used: Vec<&EndpointRow> = rows.iter().filter(|r| r.converged).map(|r| &r.endpoint).collect();
    let correlations = RankCorrelations {
        lambda_max: rank_correlation(&used, EndpointRow::lambda_max),
        trace: rank_correlation(&used, EndpointRow::trace),
        frobenius: rank_correlation(&used, EndpointRow::frobenius_per_param),
        val_acc: rank_correlation(&used, |r| r.val_acc),
    };

    let min_corr = cfg.f64("sweep.min_corr");
    let fmt_corr = |c: Option<f64>| c.map_or_else(|| "undefined".to_string(), |v| format!("{v:+.3}"));
    out.report.push(format!("{} of {} runs converged (train accuracy >= {threshold})", used.len(), rows.len()));
    out.report.push(format!(
        "Spearman vs eta/S: lambda_max {}, trace {}, frobenius/q {}, val acc {}",
        fmt_corr(correlations.lambda_max),
        fmt_corr(correlations.trace),
        fmt_corr(correlations.frobenius),
        fmt_corr(correlations.val_acc)
    ));
    out.check(Check::new(
        "trace-vs-ratio",
        correlations.trace.is_some_and(|c| c <= -min_corr),
        format!("Spearman {} (need <= -{min_corr})", fmt_corr(correlations.trace)),
    ));
    out.check(Check::new(
        "val-acc-vs-ratio",
        correlations.val_acc.is_some_and(|c| c >= min_corr),
        format!("Spearman {} (need >= +{min_corr})", fmt_corr(correlations.val_acc)),
    ));

    let group = match cfg.cells("sweep.equal_ratio_cells") {
        c if c.is_empty() => equal_ratio_cells(&cells),
        c => c.into_iter().filter(|x| cells.contains(x)).collect(),
    };
    let equal_ratio = (!group.is_empty()).then(|| {
        let ratio = group[0].0 / group[0].1 as f64;
        let accs: Vec<Vec<f64>> = group
            .iter()
            .map(|&(eta, s)| {
                used.iter().filter(|r| r.eta == eta && r.batch_size == s).filter_map(|r| r.val_acc).collect()
            })
            .collect();
        let cells: Vec<EqualRatioCell> = group
            .iter()
            .zip(&accs)
            .map(|(&(eta, s), a)| {
                let (m, sd) = mean_std(a).unwrap_or((f64::NAN, f64::NAN));
                EqualRatioCell { eta, batch_size: s, converged_seeds: a.len(), mean_val_acc: m, std_val_acc: sd }
            })
            .collect();
        let means: Vec<f64> = cells.iter().map(|c| c.mean_val_acc).collect();
        let max_gap = means.iter().copied().fold(f64::NEG_INFINITY, f64::max) - means.iter().copied().fold(f64::INFINITY, f64::min);
        let pooled = pooled_std(&accs);
        let complete = cells.len() >= 3 && cells.iter().all(|c| c.converged_seeds > 0);
        let passed = complete && max_gap <= cfg.f64("sweep.equal_ratio_tol") * pooled;
        EqualRatioCheck { ratio, cells, max_gap, pooled_std: pooled, passed }
    });
    match &equal_ratio {
        Some(e) => {
            let list: Vec<String> = e
                .cells
                .iter()
                .map(|c| format!("{}: {:.4} +- {:.4} (n={})", cell_label(c.eta, c.batch_size), c.mean_val_acc, c.std_val_acc, c.converged_seeds))
                .collect();
            out.report.push(format!("eta/S = {:?}: {}", e.ratio, list.join("; ")));
            out.check(Check::new(
                "equal-ratio",
                e.passed,
                format!("max val acc gap {:.4} vs {} x pooled std {:.4}", e.max_gap, cfg.f64("sweep.equal_ratio_tol"), e.pooled_std),
            ));
        }
        None => out.check(Check::new("equal-ratio", false, "no three cells share a ratio")),
    }
    out.report.extend(excluded.iter().map(|e| format!("excluded {e}")));

    let scatter = |title: &str, y: &str, f: &dyn Fn(&EndpointRow) -> Option<f64>| {
        Chart::new(title, "eta/S", y, Style::Points)
            .log_x()
            .with(Series::new("converged", used.iter().filter_map(|r| f(r).map(|v| (r.ratio(), v))).collect()))
    };
    out.charts.push(("trace_vs_ratio".into(), scatter("Hessian trace at the endpoint", "trace", &EndpointRow::trace)));
    out.charts.push(("lambda_max_vs_ratio".into(), scatter("largest Hessian eigenvalue", "lambda_max", &EndpointRow::lambda_max)));
    out.charts.push(("val_acc_vs_ratio".into(), scatter("validation accuracy", "val acc", &|r: &EndpointRow| r.val_acc)));
    out.truncated = records.iter().any(|r| r.truncated);
    Ok(SweepResult { rows, correlations, equal_ratio, excluded, output: out })
}
