//! Epoch-aligned comparison of rescaled `(aη, aS)` runs against a base run,
//! with `(√a·η, aS)` as the alternative rescaling.

use std::fmt;

use crate::dynamics::{curve_distance, interpolate, rescale_config, RunRecord};
use crate::error::Result;

use super::chart::{Chart, Series, Style};
use super::config::ExperimentConfig;
use super::grid::{cell_label, mean_log_curve, run_grid, trajectory_file, CellRun};
use super::output::{Check, ExperimentOutput};
use super::setup::{build_problem, RunOptions};
use super::stats::mean;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rescaling {
    Linear,
    Sqrt,
}

impl fmt::Display for Rescaling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rescaling::Linear => "linear",
            Rescaling::Sqrt => "sqrt",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescalingRow {
    pub factor: f64,
    pub variant: Rescaling,
    pub eta: f64,
    pub batch_size: usize,
    pub diverged_seeds: usize,
    /// Mean |Δ log loss| between seed-mean curves; infinite when every seed
    /// diverged.
    pub distance: f64,
    /// Largest per-epoch |Δ log loss| in units of the base seed std.
    pub max_pointwise: f64,
}

pub struct RescalingReport {
    pub envelope: f64,
    pub rows: Vec<RescalingRow>,
    /// Smallest linear factor whose distance exceeds the envelope.
    pub smallest_violation: Option<f64>,
    pub excluded: Vec<String>,
    pub output: ExperimentOutput,
}

impl RescalingReport {
    pub fn row(&self, factor: f64, variant: Rescaling) -> Option<&RescalingRow> {
        self.rows.iter().find(|r| r.factor == factor && r.variant == variant)
    }
}

struct Config {
    factor: f64,
    variant: Rescaling,
    eta: f64,
    batch_size: usize,
}

/// Base `(schedule.eta_base, schedule.s_base)` against every factor in
/// `rescaling.factors`, `experiment.seeds` seeds each.
pub fn run_rescaling_equivalence(cfg: &ExperimentConfig, opts: RunOptions<'_>) -> Result<RescalingReport> {
    let problem = build_problem(cfg)?;
    let (eta, s) = (cfg.f64("schedule.eta_base"), cfg.usize("schedule.s_base"));
    let momentum = cfg.f64("schedule.momentum");
    let n = problem.landscape.num_examples();
    let base_seed = cfg.u64("experiment.seed");
    let seeds: Vec<u64> = (0..cfg.u64("experiment.seeds")).map(|i| base_seed + i).collect();

    let mut factors = cfg.floats("rescaling.factors").to_vec();
    if !factors.contains(&1.0) {
        factors.insert(0, 1.0);
    }
    let mut configs = vec![Config { factor: 0.0, variant: Rescaling::Linear, eta, batch_size: s }];
    let mut excluded = Vec::new();
    for &a in &factors {
        let lin = rescale_config(eta, s, a)?;
        if lin.batch_size > n {
            excluded.push(format!("a={a}: batch size {} exceeds N={n}", lin.batch_size));
            continue;
        }
        configs.push(Config { factor: a, variant: Rescaling::Linear, eta: lin.eta, batch_size: lin.batch_size });
        if a != 1.0 {
            configs.push(Config { factor: a, variant: Rescaling::Sqrt, eta: eta * a.sqrt(), batch_size: lin.batch_size });
        }
    }
    // Config 0 is the base; the a = 1 entry reruns it independently.
    let runs: Vec<CellRun> = configs
        .iter()
        .flat_map(|c| seeds.iter().map(move |&seed| CellRun::constant(c.eta, c.batch_size, momentum, seed)))
        .collect();
    let records = run_grid(cfg, &problem, &runs, opts, |_, _| {})?;
    let per = seeds.len();
    let group = |i: usize| -> Vec<&RunRecord> { records[i * per..(i + 1) * per].iter().collect() };

    let base = mean_log_curve(&group(0));
    let base_exp: Vec<(f64, f64)> = base.iter().map(|&(e, m, _)| (e, m.exp())).collect();
    let envelope = cfg.f64("rescaling.envelope") * mean(&base.iter().map(|p| p.2).collect::<Vec<_>>());

    let mut out = ExperimentOutput::new(
        "rescaling",
        "factor,variant,eta,batch_size,seeds,diverged_seeds,distance,envelope,max_pointwise_sd,within",
    );
    let mut rows = Vec::new();
    let mut curves_chart = Chart::new("seed-mean training loss", "epoch", "mean log loss", Style::Lines);
    for (i, c) in configs.iter().enumerate().skip(1) {
        let recs = group(i);
        let diverged_seeds = recs.iter().filter(|r| r.diverged()).count();
        let curve = mean_log_curve(&recs);
        let (distance, max_pointwise) = if curve.is_empty() {
            (f64::INFINITY, f64::INFINITY)
        } else {
            let exp: Vec<(f64, f64)> = curve.iter().map(|&(e, m, _)| (e, m.exp())).collect();
            let log: Vec<(f64, f64)> = curve.iter().map(|&(e, m, _)| (e, m)).collect();
            let worst = base
                .iter()
                .filter_map(|&(e, m, sd)| interpolate(&log, e).map(|v| (v - m).abs() / sd))
                .fold(0.0f64, f64::max);
            let d = curve_distance(&base_exp, &exp);
            (if d.is_nan() { f64::INFINITY } else { d }, worst)
        };
        if c.variant == Rescaling::Linear {
            curves_chart = curves_chart.with(Series::new(format!("a={}", c.factor), curve.iter().map(|&(e, m, _)| (e, m)).collect()));
        }
        rows.push(RescalingRow { factor: c.factor, variant: c.variant, eta: c.eta, batch_size: c.batch_size, diverged_seeds, distance, max_pointwise });
    }
    for (i, c) in configs.iter().enumerate() {
        for (rec, seed) in group(i).iter().zip(&seeds) {
            let tag = if i == 0 { "base".to_string() } else { format!("a{}_{}", c.factor, c.variant) };
            let run = CellRun { label: format!("{tag}_{}", cell_label(c.eta, c.batch_size)), ..CellRun::constant(c.eta, c.batch_size, momentum, *seed) };
            out.files.push((trajectory_file(&run), rec.to_csv()));
        }
    }
    for r in &rows {
        out.summary_rows.push(format!(
            "{:?},{},{:?},{},{},{},{:?},{:?},{:?},{}",
            r.factor,
            r.variant,
            r.eta,
            r.batch_size,
            per,
            r.diverged_seeds,
            r.distance,
            envelope,
            r.max_pointwise,
            r.distance <= envelope
        ));
    }

    let linear = |a: f64| rows.iter().find(|r| r.factor == a && r.variant == Rescaling::Linear);
    let sqrt = |a: f64| rows.iter().find(|r| r.factor == a && r.variant == Rescaling::Sqrt);
    if let Some(r) = linear(1.0) {
        out.check(Check::new("identity", r.distance == 0.0, format!("a=1 rerun distance {:?}", r.distance)));
    }
    for &a in cfg.floats("rescaling.matching_factors") {
        match (linear(a), sqrt(a)) {
            (Some(l), Some(q)) => {
                out.check(Check::new(
                    format!("a{a}-within-envelope"),
                    l.distance <= envelope,
                    format!("distance {:.4} vs envelope {:.4} (pointwise max {:.2} sd)", l.distance, envelope, l.max_pointwise),
                ));
                out.check(Check::new(
                    format!("a{a}-linear-beats-sqrt"),
                    l.distance < q.distance,
                    format!("linear {:.4} vs sqrt {:.4}", l.distance, q.distance),
                ));
            }
            _ => out.check(Check::new(format!("a{a}-within-envelope"), false, "factor was not run")),
        }
    }
    let largest = rows.iter().filter(|r| r.variant == Rescaling::Linear).map(|r| r.factor).fold(f64::NAN, f64::max);
    if let Some(l) = linear(largest).filter(|_| largest > 1.0) {
        out.check(Check::new(
            "breakdown",
            l.distance > envelope,
            format!("a={largest}: distance {:.4} vs envelope {:.4}, {} of {per} seeds diverged", l.distance, envelope, l.diverged_seeds),
        ));
    }
    let smallest_violation = rows
        .iter()
        .filter(|r| r.variant == Rescaling::Linear && r.distance > envelope)
        .map(|r| r.factor)
        .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.min(a))));
    out.report.push(format!("base eta={eta} S={s}, {per} seeds, envelope {envelope:.4}"));
    out.report.push(match smallest_violation {
        Some(a) => format!("smallest factor outside the envelope: a={a}"),
        None => "no factor left the envelope".into(),
    });
    out.report.extend(excluded.iter().map(|e| format!("excluded {e}")));

    let dist_chart = |v: Rescaling| {
        Series::new(v.to_string(), rows.iter().filter(|r| r.variant == v && r.distance.is_finite()).map(|r| (r.factor, r.distance)).collect())
    };
    let max_factor = factors.iter().copied().fold(1.0, f64::max);
    out.charts.push(("loss_curves".into(), curves_chart.with(Series::new("base", base.iter().map(|&(e, m, _)| (e, m)).collect()))));
    out.charts.push((
        "distance".into(),
        Chart::new("distance to the base curve", "factor a", "mean |d log loss|", Style::Lines)
            .log_x()
            .with(dist_chart(Rescaling::Linear))
            .with(dist_chart(Rescaling::Sqrt))
            .with(Series::new("envelope", vec![(1.0, envelope), (max_factor, envelope)])),
    ));
    out.truncated = records.iter().any(|r| r.truncated);
    Ok(RescalingReport { envelope, rows, smallest_violation, excluded, output: out })
}
