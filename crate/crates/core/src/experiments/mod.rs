//! Config-driven experiments and their artifacts.
//!
//! Each `run_*` function returns a typed result plus an [`ExperimentOutput`]
//! holding the summary CSV, report, trajectory files and charts; nothing is
//! written until [`write_artifacts`] is called. Grid cells run on a worker
//! pool; results are assembled in input order so artifacts do not depend on
//! the worker count.

pub mod chart;
pub mod config;
pub mod cyclic;
pub mod equilibrium_suite;
mod grid;
pub mod interpolation;
pub mod memorization;
pub mod output;
pub mod probe;
pub mod rescaling;
pub mod stats;
pub mod sweep;
pub mod setup;
pub mod trajectories;

pub use config::{ExperimentConfig, Value, ValueType, KEYS};
pub use cyclic::{run_cyclic_comparison, CyclicReport, CyclicRow, ScheduleSummary};
pub use equilibrium_suite::{run_equilibrium_suite, EquilibriumReport};
pub use interpolation::{run_interpolation, run_interpolation_experiment, InterpolationPoint, InterpolationReport};
pub use memorization::{run_memorization, GroupCorrelation, MemorizationReport, MemorizationRow};
pub use output::{strip_timestamp, write_artifacts, Check, ExperimentOutput};
pub use grid::EndpointRow;
pub use probe::{run_probe, ProbeReport};
pub use rescaling::{run_rescaling_equivalence, Rescaling, RescalingReport, RescalingRow};
pub use setup::{build_problem, RunOptions};
pub use sweep::{run_ratio_sweep, EqualRatioCheck, RankCorrelations, SweepResult, SweepRow};
pub use trajectories::{run_trajectories, TrajectoryReport};

use crate::error::Result;

/// Runs the experiment named by `experiment.kind`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions<'_>) -> Result<ExperimentOutput> {
    setup::validate(cfg)?;
    Ok(match cfg.str("experiment.kind") {
        "equilibrium" => run_equilibrium_suite(cfg, opts)?.output,
        "interpolation" => run_interpolation_experiment(cfg, opts)?.output,
        "rescaling" => run_rescaling_equivalence(cfg, opts)?.output,
        "sweep" => run_ratio_sweep(cfg, opts)?.output,
        "cyclic" => run_cyclic_comparison(cfg, opts)?.output,
        "memorization" => run_memorization(cfg, opts)?.output,
        "probe" => run_probe(cfg, opts)?.output,
        _ => run_trajectories(cfg, opts)?.output,
    })
}
