//! Turns a resolved config into landscapes, noise models and trajectory specs.

use std::sync::atomic::AtomicBool;

use crate::curvature::{HvpEngine, HvpMode, ProbeSettings};
use crate::dynamics::{run_trajectory, stream_rng, Budget, RunRecord, Schedule, ScheduleKind, TrajectorySpec};
use crate::error::{LabError, Result};
use crate::landscape::{
    make_train_val, Activation, DatasetSpec, DoubleWell, Generator, Landscape, Mlp, MlpLandscape, ParameterVector,
    QuadraticBowl,
};
use crate::noise::{factorize_covariance, CovarianceSource, GradientNoiseModel, Sampling};

use super::config::ExperimentConfig;

/// Stream of `experiment.seed` used for random bowl eigenbases.
const GEOMETRY_STREAM: u64 = 24;

/// Execution knobs that do not change results.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions<'a> {
    /// Worker threads for grid cells; 0 lets the pool decide.
    pub workers: usize,
    pub cancel: Option<&'a AtomicBool>,
}

/// A landscape plus its initialisation rule.
pub struct Problem {
    pub landscape: Box<dyn Landscape>,
    init: Init,
    /// Training loss of the label-generating teacher, when there is one.
    pub teacher_loss: Option<f64>,
}

enum Init {
    Mlp { arch: Mlp, scale: f64 },
    Fixed(ParameterVector),
}

impl Problem {
    pub fn new_fixed(landscape: Box<dyn Landscape>, start: ParameterVector) -> Self {
        Self { landscape, init: Init::Fixed(start), teacher_loss: None }
    }

    /// Initial parameters for trajectory seed `seed` (stream 0).
    pub fn init(&self, seed: u64) -> ParameterVector {
        match &self.init {
            Init::Mlp { arch, scale } => arch.init_params(&mut stream_rng(seed, 0), *scale),
            Init::Fixed(p) => p.clone(),
        }
    }
}

pub fn dataset_spec(cfg: &ExperimentConfig) -> DatasetSpec {
    let generator = match cfg.str("dataset.generator") {
        "blobs" => Generator::GaussianBlobs { spread: cfg.f64("dataset.blob_spread") },
        _ => Generator::Teacher {
            hidden: cfg.ints("dataset.teacher_hidden"),
            temperature: cfg.f64("dataset.teacher_temperature"),
            weight_scale: cfg.f64("dataset.teacher_scale"),
        },
    };
    DatasetSpec {
        n: cfg.usize("dataset.n"),
        input_dim: cfg.usize("dataset.input_dim"),
        classes: cfg.usize("dataset.classes"),
        generator,
        corrupt_fraction: cfg.f64("dataset.corrupt_fraction"),
        seed: cfg.u64("experiment.seed"),
    }
}

pub fn mlp_architecture(cfg: &ExperimentConfig) -> Result<Mlp> {
    let mut sizes = vec![cfg.usize("dataset.input_dim")];
    sizes.extend(cfg.ints("landscape.hidden"));
    sizes.push(cfg.usize("dataset.classes"));
    let activation = Activation::parse(cfg.str("landscape.activation"))
        .ok_or_else(|| LabError::config("landscape.activation", "unknown activation"))?;
    Mlp::new(sizes, activation)
}

/// Bowl coefficients evenly spaced over `[lambda_min, lambda_max]`.
pub fn bowl_coefficients(cfg: &ExperimentConfig) -> Vec<f64> {
    let q = cfg.usize("landscape.dim");
    let (lo, hi) = (cfg.f64("landscape.lambda_min"), cfg.f64("landscape.lambda_max"));
    if q == 1 {
        return vec![hi];
    }
    (0..q).map(|i| lo + (hi - lo) * i as f64 / (q - 1) as f64).collect()
}

pub fn build_bowl(cfg: &ExperimentConfig) -> Result<QuadraticBowl> {
    let coeffs = bowl_coefficients(cfg);
    let center = ParameterVector::zeros(coeffs.len());
    if cfg.bool("landscape.rotated") {
        QuadraticBowl::rotated(center, coeffs, &mut stream_rng(cfg.u64("experiment.seed"), GEOMETRY_STREAM))
    } else {
        QuadraticBowl::axis_aligned(center, coeffs)
    }
}

pub fn build_well(cfg: &ExperimentConfig) -> DoubleWell {
    match cfg.str("landscape.well") {
        "symmetric" => DoubleWell::standard_symmetric(),
        "asymmetric-2d" => {
            let w = DoubleWell::standard_asymmetric();
            let [a, b] = *w.targets();
            DoubleWell::two_dimensional(a, b, w.quartic(), (1.0, 2.0)).expect("standard targets are valid")
        }
        _ => DoubleWell::standard_asymmetric(),
    }
}

/// The landscape named by `landscape.kind`.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    Ok(match cfg.str("landscape.kind") {
        "quadratic-bowl" => {
            let bowl = build_bowl(cfg)?;
            let start = bowl.center().clone();
            Problem::new_fixed(Box::new(bowl), start)
        }
        "double-well" => {
            let well = build_well(cfg);
            let start = ParameterVector::new(well.minimum_a().location.clone())?;
            Problem::new_fixed(Box::new(well), start)
        }
        _ => {
            let arch = mlp_architecture(cfg)?;
            let spec = dataset_spec(cfg);
            let (train, val) = make_train_val(&spec, cfg.usize("dataset.n_val"))?;
            let teacher_loss = match spec.teacher() {
                Some(t) => Some(MlpLandscape::new(t.arch().clone(), train.clone(), None)?.loss_raw(t.parameters())),
                None => None,
            };
            let land = MlpLandscape::new(arch.clone(), train, Some(val))?;
            Problem {
                landscape: Box::new(land),
                init: Init::Mlp { arch, scale: cfg.f64("landscape.init_scale") },
                teacher_loss,
            }
        }
    })
}

pub fn noise_model(cfg: &ExperimentConfig, landscape: &dyn Landscape, batch_size: usize) -> Result<GradientNoiseModel> {
    Ok(match cfg.str("noise.kind") {
        "isotropic" => GradientNoiseModel::isotropic(batch_size, cfg.f64("noise.sigma2")),
        "surrogate-hessian" => {
            let theta = ParameterVector::zeros(landscape.dim());
            let h = landscape.analytic_hessian(&theta).ok_or_else(|| {
                LabError::config("noise.kind", "surrogate-hessian needs a landscape with an analytic Hessian")
            })?;
            GradientNoiseModel::surrogate(batch_size, CovarianceSource::Fixed(factorize_covariance(&h)?))
        }
        "surrogate-covariance" => GradientNoiseModel::surrogate(
            batch_size,
            CovarianceSource::SampleCovariance { refresh_interval: cfg.u64("noise.refresh").max(1) },
        ),
        _ => {
            let sampling = Sampling::parse(cfg.str("noise.sampling")).unwrap_or(Sampling::WithoutReplacement);
            GradientNoiseModel::minibatch(batch_size, sampling)
        }
    })
}

pub fn schedule(cfg: &ExperimentConfig) -> Schedule {
    Schedule {
        kind: ScheduleKind::parse(cfg.str("schedule.kind")).unwrap_or(ScheduleKind::Constant),
        eta_base: cfg.f64("schedule.eta_base"),
        eta_max: cfg.f64("schedule.eta_max"),
        s_base: cfg.usize("schedule.s_base"),
        s_max: cfg.usize("schedule.s_max"),
        cycle_length: cfg.u64("schedule.cycle_length") as f64,
    }
}

pub fn probe_settings(cfg: &ExperimentConfig, landscape: &dyn Landscape) -> ProbeSettings {
    let engine = match HvpMode::parse(cfg.str("probe.engine")) {
        Some(HvpMode::Analytic) => HvpEngine::analytic(),
        Some(HvpMode::FiniteDifference) => HvpEngine::finite_difference(),
        None => HvpEngine::best_for(landscape, &ParameterVector::zeros(landscape.dim())),
    };
    ProbeSettings {
        engine,
        power_iters: cfg.usize("probe.power_iters"),
        power_tol: cfg.f64("probe.power_tol"),
        trace_probes: cfg.usize("probe.trace_probes"),
        frob_probes: cfg.usize("probe.frob_probes"),
    }
}

pub fn budget(cfg: &ExperimentConfig) -> Budget {
    match cfg.u64("budget.steps") {
        0 => Budget::Epochs(cfg.f64("budget.epochs")),
        s => Budget::Steps(s),
    }
}

/// Trajectory spec carrying the config's budget, stopping, recording and
/// probe settings.
pub fn trajectory_spec(cfg: &ExperimentConfig, problem: &Problem, schedule: Schedule, seed: u64) -> TrajectorySpec {
    let landscape = problem.landscape.as_ref();
    let mut spec = TrajectorySpec::new(schedule, budget(cfg), cfg.f64("budget.record_every"), seed);
    spec.momentum = cfg.f64("schedule.momentum");
    spec.probe_epochs = cfg.floats("probe.epochs").to_vec();
    spec.probe_final = cfg.bool("probe.final");
    spec.probes = probe_settings(cfg, landscape);
    let stop = cfg.f64("budget.stop_train_acc");
    spec.stop_at_train_accuracy = (stop > 0.0).then_some(stop);
    let excess = cfg.f64("budget.stop_train_loss");
    let reference = match cfg.str("budget.loss_reference") {
        "teacher" => problem.teacher_loss.unwrap_or(0.0),
        _ => 0.0,
    };
    spec.stop_at_train_loss = (excess > 0.0).then_some(reference + excess);
    spec
}

/// Runs one trajectory with a fresh noise model sized for the schedule.
pub fn run_cell(cfg: &ExperimentConfig, problem: &Problem, spec: &TrajectorySpec, cancel: Option<&AtomicBool>) -> Result<RunRecord> {
    let land = problem.landscape.as_ref();
    let noise = noise_model(cfg, land, spec.schedule.s_base)?;
    run_trajectory(land, &noise, &problem.init(spec.seed), spec, cancel)
}

/// Maps `f` over `items` on up to `workers` threads, keeping input order.
pub fn par_map<T, R, F>(items: Vec<T>, workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if workers != 1 {
            let mut builder = rayon::ThreadPoolBuilder::new();
            if workers > 1 {
                builder = builder.num_threads(workers);
            }
            if let Ok(pool) = builder.build() {
                return pool.install(|| items.into_par_iter().map(&f).collect());
            }
        }
    }
    let _ = workers;
    items.into_iter().map(f).collect()
}

/// Checks the grid-level invariants shared by all experiments.
pub fn validate(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.u64("experiment.seeds") == 0 {
        return Err(LabError::config("experiment.seeds", "need at least one seed"));
    }
    for key in ["sweep.equal_ratio_cells", "memorization.cells", "interpolation.cell_a", "interpolation.cell_b"] {
        for (eta, s) in cfg.cells(key) {
            if !(eta > 0.0) || s == 0 {
                return Err(LabError::config(key, format!("cell {eta}/{s} needs eta > 0 and S >= 1")));
            }
        }
    }
    if cfg.floats("sweep.etas").iter().any(|&e| !(e > 0.0)) {
        return Err(LabError::config("sweep.etas", "learning rates must be positive"));
    }
    if cfg.ints("sweep.batch_sizes").contains(&0) {
        return Err(LabError::config("sweep.batch_sizes", "batch sizes must be at least 1"));
    }
    if cfg.floats("rescaling.factors").iter().any(|&a| !(a > 0.0)) {
        return Err(LabError::config("rescaling.factors", "factors must be positive"));
    }
    if !(0.0..1.0).contains(&cfg.f64("schedule.momentum")) {
        return Err(LabError::config("schedule.momentum", "momentum must lie in [0, 1)"));
    }
    if cfg.floats("memorization.momenta").iter().any(|m| !(0.0..1.0).contains(m)) {
        return Err(LabError::config("memorization.momenta", "momentum must lie in [0, 1)"));
    }
    if !(0.0..=1.0).contains(&cfg.f64("dataset.corrupt_fraction")) {
        return Err(LabError::config("dataset.corrupt_fraction", "fraction must lie in [0, 1]"));
    }
    if cfg.floats("memorization.fractions").iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(LabError::config("memorization.fractions", "fractions must lie in [0, 1]"));
    }
    if cfg.str("budget.loss_reference") == "teacher" && !(cfg.str("landscape.kind") == "mlp" && cfg.str("dataset.generator") == "teacher") {
        return Err(LabError::config("budget.loss_reference", "teacher reference needs an MLP on teacher data"));
    }
    if !(cfg.f64("budget.record_every") > 0.0) {
        return Err(LabError::config("budget.record_every", "must be positive"));
    }
    schedule(cfg).validate().map_err(|e| LabError::config("schedule.kind", e.to_string()))?;
    if cfg.str("landscape.kind") == "mlp" && cfg.usize("dataset.n") < cfg.usize("schedule.s_base") {
        return Err(LabError::config("schedule.s_base", "batch size exceeds dataset.n"));
    }
    Ok(())
}
