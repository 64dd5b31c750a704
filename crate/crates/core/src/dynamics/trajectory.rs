use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, Ordering};

use super::optimizer::{sgd_step, OptimizerState};
use super::schedule::Schedule;
use super::stream_rng;
use crate::curvature::{spectral_probe, ProbeSettings, SpectralEstimate};
use crate::error::{LabError, Result};
use crate::landscape::{check_dim, Landscape, ParameterVector};
use crate::noise::GradientNoiseModel;

/// Loss growth beyond this multiple of the initial loss counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Steps(u64),
    Epochs(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub schedule: Schedule,
    pub momentum: f64,
    pub budget: Budget,
    /// Recording interval in epochs.
    pub record_every: f64,
    /// Extra curvature probes at these epochs.
    pub probe_epochs: Vec<f64>,
    pub probe_final: bool,
    pub probes: ProbeSettings,
    pub seed: u64,
    /// Stop at the first record whose training accuracy reaches this value.
    pub stop_at_train_accuracy: Option<f64>,
    /// Stop at the first record whose training loss is at or below this value.
    pub stop_at_train_loss: Option<f64>,
}

impl TrajectorySpec {
    pub fn new(schedule: Schedule, budget: Budget, record_every: f64, seed: u64) -> Self {
        Self {
            schedule,
            momentum: 0.0,
            budget,
            record_every,
            probe_epochs: Vec::new(),
            probe_final: false,
            probes: ProbeSettings::default(),
            seed,
            stop_at_train_accuracy: None,
            stop_at_train_loss: None,
        }
    }

    fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(LabError::invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.record_every > 0.0) {
            return Err(LabError::invalid("record_every must be positive"));
        }
        if let Budget::Epochs(e) = self.budget {
            if !(e >= 0.0 && e.is_finite()) {
                return Err(LabError::invalid(format!("epoch budget must be finite and >= 0, got {e}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordRow {
    pub epoch: f64,
    pub step: u64,
    pub eta: f64,
    pub batch_size: usize,
    pub train_loss: f64,
    pub train_acc: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
    pub diverged: bool,
    pub probe: Option<SpectralEstimate>,
}

impl RecordRow {
    pub fn ratio(&self) -> f64 {
        self.eta / self.batch_size as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub step: u64,
    pub epoch: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub seed: u64,
    pub rows: Vec<RecordRow>,
    pub divergence: Option<Divergence>,
    /// Set when a cancellation request stopped the run early.
    pub truncated: bool,
    pub final_theta: ParameterVector,
}

pub const TRAJECTORY_CSV_HEADER: &str = "epoch,step,eta,batch_size,ratio,train_loss,val_loss,val_acc,diverged";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunRecord {
    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }

    /// Last row, which is the final state (or the divergence marker).
    pub fn last(&self) -> &RecordRow {
        self.rows.last().expect("a run record always holds the initial row")
    }

    /// Last row with finite losses.
    pub fn last_finite(&self) -> &RecordRow {
        self.rows.iter().rev().find(|r| !r.diverged).unwrap_or(&self.rows[0])
    }

    /// `(epoch, train_loss)` over non-diverged rows.
    pub fn loss_curve(&self) -> Vec<(f64, f64)> {
        self.rows.iter().filter(|r| !r.diverged).map(|r| (r.epoch, r.train_loss)).collect()
    }

    /// Trajectory CSV. Probe columns are present when any row carries a probe.
    pub fn to_csv(&self) -> String {
        let probes = self.rows.iter().any(|r| r.probe.is_some());
        let mut s = String::from(TRAJECTORY_CSV_HEADER);
        if probes {
            s.push_str(",lambda_max,trace_h,frob_h");
        }
        s.push('\n');
        for r in &self.rows {
            write!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.epoch,
                r.step,
                r.eta,
                r.batch_size,
                r.ratio(),
                r.train_loss,
                opt(r.val_loss),
                opt(r.val_acc),
                r.diverged
            )
            .unwrap();
            if probes {
                match &r.probe {
                    Some(p) => write!(s, ",{},{},{}", p.lambda_max, p.trace, p.frobenius).unwrap(),
                    None => s.push_str(",,,"),
                }
            }
            s.push('\n');
        }
        if self.truncated {
            s.push_str("# truncated=true\n");
        }
        s
    }
}

fn examples_for(epochs: f64, n: usize) -> u128 {
    // Tolerates representation error in products like 0.1·N.
    let x = epochs * n as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as u128
    } else {
        x.ceil() as u128
    }
}

struct Recorder<'a> {
    landscape: &'a dyn Landscape,
    spec: &'a TrajectorySpec,
    initial_loss: f64,
    probe_rng: rand_chacha::ChaCha8Rng,
}

impl Recorder<'_> {
    fn row(&mut self, state: &OptimizerState, eta: f64, batch_size: usize, probe: bool) -> Result<(RecordRow, Option<String>)> {
        let theta = state.theta.as_slice();
        let train_loss = self.landscape.loss_raw(theta);
        let val = self.landscape.validation(theta);
        let mut row = RecordRow {
            epoch: state.epoch(),
            step: state.step,
            eta,
            batch_size,
            train_loss,
            train_acc: self.landscape.train_accuracy(theta),
            val_loss: val.map(|v| v.loss),
            val_acc: val.map(|v| v.accuracy),
            diverged: false,
            probe: None,
        };
        let reason = if !train_loss.is_finite() {
            Some("non-finite loss".to_string())
        } else if train_loss > DIVERGENCE_FACTOR * self.initial_loss.max(f64::MIN_POSITIVE) {
            Some(format!("loss {train_loss:e} exceeds {DIVERGENCE_FACTOR:e} x initial"))
        } else {
            None
        };
        if reason.is_some() {
            row.diverged = true;
        } else if probe {
            row.probe = Some(spectral_probe(&self.spec.probes, self.landscape, theta, &mut self.probe_rng)?);
        }
        Ok((row, reason))
    }
}

/// Runs SGD under `spec.schedule` from `init` and records the trajectory.
///
/// Rows are written at initialisation, whenever the epoch counter crosses a
/// multiple of `record_every` or a probe epoch, and at the end. The noise
/// model's batch size is overwritten by the schedule at every step.
/// Divergence ends the run without an error: the record keeps every finite
/// row, adds one row flagged `diverged` and fills `divergence`.
pub fn run_trajectory(
    landscape: &dyn Landscape,
    noise: &GradientNoiseModel,
    init: &ParameterVector,
    spec: &TrajectorySpec,
    cancel: Option<&AtomicBool>,
) -> Result<RunRecord> {
    spec.validate()?;
    check_dim(landscape.dim(), init.len())?;
    let n = landscape.num_examples();
    let mut noise = noise.clone();
    let mut state = OptimizerState::new(init.clone(), n, spec.seed)?;
    let initial_loss = landscape.loss_raw(init);
    if !initial_loss.is_finite() {
        return Err(LabError::non_finite("initial loss"));
    }
    let mut recorder = Recorder { landscape, spec, initial_loss, probe_rng: stream_rng(spec.seed, 2) };

    let mut probe_targets: Vec<u128> = spec.probe_epochs.iter().map(|&e| examples_for(e, n)).collect();
    probe_targets.sort_unstable();
    probe_targets.dedup();
    let mut next_probe = 0;
    let mut next_record: u64 = 1;
    let record_target = |j: u64| examples_for(j as f64 * spec.record_every, n);
    let end = match spec.budget {
        Budget::Steps(k) => End::Steps(k),
        Budget::Epochs(e) => End::Examples(examples_for(e, n)),
    };

    let (eta0, s0) = spec.schedule.at(0.0);
    while next_probe < probe_targets.len() && probe_targets[next_probe] == 0 {
        next_probe += 1;
    }
    let done_at_start = end.reached(&state);
    let probe_now = probe_targets.first() == Some(&0) || (done_at_start && spec.probe_final);
    let (first, _) = recorder.row(&state, eta0, s0, probe_now)?;
    let mut record = RunRecord { seed: spec.seed, rows: vec![first], divergence: None, truncated: false, final_theta: init.clone() };
    if stop_requested(spec, &record) {
        return Ok(record);
    }

    let mut last = (eta0, s0);
    while !end.reached(&state) {
        if cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            record.truncated = true;
            break;
        }
        let (eta, s) = spec.schedule.at(state.epoch());
        noise.batch_size = s;
        last = (eta, s);
        if let Err(e) = sgd_step(&mut state, landscape, &mut noise, eta, spec.momentum) {
            return match e {
                LabError::Diverged { step, epoch, reason } => {
                    record.rows.push(diverged_row(&state, eta, s));
                    record.divergence = Some(Divergence { step, epoch, reason });
                    Ok(record)
                }
                LabError::NonFinite { context } => {
                    record.rows.push(diverged_row(&state, eta, s));
                    record.divergence = Some(Divergence { step: state.step, epoch: state.epoch(), reason: context });
                    Ok(record)
                }
                other => Err(other),
            };
        }
        let seen = state.examples_seen();
        let mut due = false;
        while seen >= record_target(next_record) {
            next_record += 1;
            due = true;
        }
        let mut probe = false;
        while next_probe < probe_targets.len() && seen >= probe_targets[next_probe] {
            next_probe += 1;
            probe = true;
        }
        let finished = end.reached(&state);
        if due || probe || finished {
            let (row, reason) = recorder.row(&state, eta, s, probe || (finished && spec.probe_final))?;
            record.rows.push(row);
            if let Some(reason) = reason {
                record.divergence = Some(Divergence { step: state.step, epoch: state.epoch(), reason });
                record.final_theta = state.theta.clone();
                return Ok(record);
            }
            if stop_requested(spec, &record) {
                if spec.probe_final && record.last().probe.is_none() {
                    let p = spectral_probe(&spec.probes, landscape, &state.theta, &mut recorder.probe_rng)?;
                    record.rows.last_mut().unwrap().probe = Some(p);
                }
                break;
            }
        }
    }
    if record.truncated && record.last().step != state.step {
        let (row, _) = recorder.row(&state, last.0, last.1, false)?;
        record.rows.push(row);
    }
    record.final_theta = state.theta;
    Ok(record)
}

fn stop_requested(spec: &TrajectorySpec, record: &RunRecord) -> bool {
    let last = record.last();
    let acc = matches!((spec.stop_at_train_accuracy, last.train_acc), (Some(target), Some(a)) if a >= target);
    let loss = spec.stop_at_train_loss.is_some_and(|target| last.train_loss <= target);
    acc || loss
}

fn diverged_row(state: &OptimizerState, eta: f64, batch_size: usize) -> RecordRow {
    RecordRow {
        epoch: state.epoch(),
        step: state.step,
        eta,
        batch_size,
        train_loss: f64::NAN,
        train_acc: None,
        val_loss: None,
        val_acc: None,
        diverged: true,
        probe: None,
    }
}

enum End {
    Steps(u64),
    Examples(u128),
}

impl End {
    fn reached(&self, state: &OptimizerState) -> bool {
        match *self {
            End::Steps(k) => state.step >= k,
            End::Examples(x) => state.examples_seen() >= x,
        }
    }
}

/// Parameter snapshots from a constant-`(η, S)` run, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSamples {
    dim: usize,
    values: Vec<f64>,
}

impl PathSamples {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(LabError::invalid("sample buffer length is not a multiple of the dimension"));
        }
        Ok(Self { dim, values })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.dim)
    }

    /// Samples from index `start` on.
    pub fn tail(&self, start: usize) -> PathSamples {
        PathSamples { dim: self.dim, values: self.values[start.min(self.len()) * self.dim..].to_vec() }
    }
}

/// Runs `burn_in + n_samples·thin` steps at fixed `(η, noise.batch_size)` and
/// keeps every `thin`-th state after burn-in. Divergence is an error here.
#[allow(clippy::too_many_arguments)]
pub fn sample_path(
    landscape: &dyn Landscape,
    noise: &GradientNoiseModel,
    eta: f64,
    init: &ParameterVector,
    burn_in: u64,
    n_samples: usize,
    thin: u64,
    seed: u64,
    cancel: Option<&AtomicBool>,
) -> Result<PathSamples> {
    check_dim(landscape.dim(), init.len())?;
    if thin == 0 {
        return Err(LabError::invalid("thin must be at least 1"));
    }
    let mut noise = noise.clone();
    let mut state = OptimizerState::new(init.clone(), landscape.num_examples(), seed)?;
    for _ in 0..burn_in {
        sgd_step(&mut state, landscape, &mut noise, eta, 0.0)?;
    }
    let q = init.len();
    let mut values = Vec::with_capacity(n_samples * q);
    for i in 0..n_samples {
        if i % 1024 == 0 && cancel.is_some_and(|c| c.load(Ordering::Relaxed)) {
            break;
        }
        for _ in 0..thin {
            sgd_step(&mut state, landscape, &mut noise, eta, 0.0)?;
        }
        values.extend_from_slice(&state.theta);
    }
    PathSamples::new(q, values)
}

/// Mean absolute difference of log-loss between two curves on the epoch
/// axis. `b` is linearly interpolated at the epochs of `a` that fall inside
/// `b`'s range. Returns `NaN` when the curves share no epochs.
pub fn curve_distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let log_b: Vec<(f64, f64)> = b.iter().map(|&(e, l)| (e, l.ln())).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for &(e, l) in a {
        if let Some(lb) = interpolate(&log_b, e) {
            total += (l.ln() - lb).abs();
            count += 1;
        }
    }
    if count == 0 {
        f64::NAN
    } else {
        total / count as f64
    }
}

/// Linear interpolation on a curve sorted by its first coordinate.
pub fn interpolate(curve: &[(f64, f64)], x: f64) -> Option<f64> {
    let first = curve.first()?;
    let last = curve.last()?;
    if x < first.0 || x > last.0 {
        return None;
    }
    let i = curve.partition_point(|p| p.0 < x);
    if i < curve.len() && curve[i].0 == x {
        return Some(curve[i].1);
    }
    let (x0, y0) = curve[i - 1];
    let (x1, y1) = curve[i];
    Some(y0 + (y1 - y0) * (x - x0) / (x1 - x0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::HvpEngine;
    use crate::landscape::{make_train_val, Activation, DatasetSpec, Generator, Mlp, MlpLandscape, QuadraticBowl};
    use crate::noise::{factorize_covariance, CovarianceSource, Sampling};

    fn bowl() -> QuadraticBowl {
        QuadraticBowl::axis_aligned(ParameterVector::zeros(3), vec![0.5, 1.0, 2.0]).unwrap()
    }

    fn mlp() -> (MlpLandscape, ParameterVector) {
        let spec = DatasetSpec {
            n: 100,
            input_dim: 3,
            classes: 3,
            generator: Generator::Teacher { hidden: vec![6], temperature: 0.0, weight_scale: 2.0 },
            corrupt_fraction: 0.0,
            seed: 2,
        };
        let (train, val) = make_train_val(&spec, 50).unwrap();
        let arch = Mlp::new(vec![3, 6, 3], Activation::Tanh).unwrap();
        let init = arch.init_params(&mut stream_rng(2, 0), 1.0);
        (MlpLandscape::new(arch, train, Some(val)).unwrap(), init)
    }

    #[test]
    fn zero_budget_gives_single_record() {
        let (land, init) = mlp();
        let spec = TrajectorySpec::new(Schedule::constant(0.1, 10), Budget::Epochs(0.0), 1.0, 0);
        let noise = GradientNoiseModel::minibatch(10, Sampling::WithoutReplacement);
        let rec = run_trajectory(&land, &noise, &init, &spec, None).unwrap();
        assert_eq!(rec.rows.len(), 1);
        assert_eq!(rec.rows[0].epoch, 0.0);
        assert!(rec.rows[0].val_acc.is_some());
    }

    #[test]
    fn deterministic_under_seed() {
        let (land, init) = mlp();
        let mut spec = TrajectorySpec::new(Schedule::constant(0.1, 10), Budget::Epochs(3.0), 0.5, 7);
        spec.probe_final = true;
        spec.probes.trace_probes = 5;
        spec.probes.frob_probes = 5;
        spec.probes.power_iters = 20;
        let noise = GradientNoiseModel::minibatch(10, Sampling::WithoutReplacement);
        let a = run_trajectory(&land, &noise, &init, &spec, None).unwrap();
        let b = run_trajectory(&land, &noise, &init, &spec, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(a.rows.len(), 7);
        assert!(a.last().probe.is_some());
        spec.seed = 8;
        assert_ne!(run_trajectory(&land, &noise, &init, &spec, None).unwrap().rows, a.rows);
    }

    #[test]
    fn gradient_descent_on_bowl_decreases_loss() {
        let b = bowl();
        let init = ParameterVector::new(vec![1.0, -1.0, 0.5]).unwrap();
        let zero = factorize_covariance(&nalgebra::DMatrix::zeros(3, 3)).unwrap();
        let noise = GradientNoiseModel::surrogate(1, CovarianceSource::Fixed(zero));
        // Stability needs η < 2/h_max = 0.5.
        let spec = TrajectorySpec::new(Schedule::constant(0.4, 1), Budget::Steps(50), 1.0, 0);
        let rec = run_trajectory(&b, &noise, &init, &spec, None).unwrap();
        assert_eq!(rec.rows.len(), 51);
        for w in rec.rows.windows(2) {
            assert!(w[1].train_loss < w[0].train_loss);
        }
    }

    #[test]
    fn divergence_is_recorded_not_raised() {
        let b = bowl();
        let init = ParameterVector::new(vec![1.0, 1.0, 1.0]).unwrap();
        let noise = GradientNoiseModel::minibatch(1, Sampling::WithoutReplacement);
        let spec = TrajectorySpec::new(Schedule::constant(1.5, 1), Budget::Steps(2000), 1.0, 0);
        let rec = run_trajectory(&b, &noise, &init, &spec, None).unwrap();
        assert!(rec.diverged());
        assert!(rec.last().diverged);
        assert!(!rec.last_finite().diverged);
    }

    #[test]
    fn cancellation_truncates() {
        let (land, init) = mlp();
        let spec = TrajectorySpec::new(Schedule::constant(0.1, 10), Budget::Epochs(5.0), 1.0, 0);
        let noise = GradientNoiseModel::minibatch(10, Sampling::WithoutReplacement);
        let flag = AtomicBool::new(true);
        let rec = run_trajectory(&land, &noise, &init, &spec, Some(&flag)).unwrap();
        assert!(rec.truncated);
        assert!(rec.to_csv().ends_with("# truncated=true\n"));
    }

    #[test]
    fn probes_at_requested_epochs() {
        let b = bowl();
        let init = ParameterVector::new(vec![1.0, 1.0, 1.0]).unwrap();
        let noise = GradientNoiseModel::isotropic(1, 1e-4);
        let mut spec = TrajectorySpec::new(Schedule::constant(0.1, 1), Budget::Steps(30), 10.0, 0);
        spec.probe_epochs = vec![5.0, 12.0];
        spec.probes.engine = HvpEngine::analytic();
        let rec = run_trajectory(&b, &noise, &init, &spec, None).unwrap();
        let probed: Vec<f64> = rec.rows.iter().filter(|r| r.probe.is_some()).map(|r| r.epoch).collect();
        assert_eq!(probed, vec![5.0, 12.0]);
        let header = rec.to_csv().lines().next().unwrap().to_string();
        assert_eq!(header, format!("{TRAJECTORY_CSV_HEADER},lambda_max,trace_h,frob_h"));
        let p = rec.rows.iter().find_map(|r| r.probe).unwrap();
        assert!((p.lambda_max - 4.0).abs() < 1e-6);
    }

    #[test]
    fn stops_on_accuracy_target() {
        let (land, init) = mlp();
        let mut spec = TrajectorySpec::new(Schedule::constant(0.2, 10), Budget::Epochs(50.0), 1.0, 0);
        spec.stop_at_train_accuracy = Some(0.0);
        let noise = GradientNoiseModel::minibatch(10, Sampling::WithoutReplacement);
        let rec = run_trajectory(&land, &noise, &init, &spec, None).unwrap();
        assert_eq!(rec.rows.len(), 1);
    }

    #[test]
    fn path_samples_thin_and_shape() {
        let b = bowl();
        let init = ParameterVector::new(vec![1.0, 1.0, 1.0]).unwrap();
        let noise = GradientNoiseModel::isotropic(1, 1e-2);
        let p = sample_path(&b, &noise, 0.01, &init, 10, 25, 4, 3, None).unwrap();
        assert_eq!((p.len(), p.dim()), (25, 3));
        assert_eq!(p.tail(20).len(), 5);
        let q = sample_path(&b, &noise, 0.01, &init, 10, 25, 4, 3, None).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn curve_distance_basics() {
        let a = vec![(0.0, 1.0), (1.0, 0.5), (2.0, 0.25)];
        assert_eq!(curve_distance(&a, &a), 0.0);
        let b: Vec<(f64, f64)> = a.iter().map(|&(e, l)| (e, l * 2.0)).collect();
        assert!((curve_distance(&a, &b) - 2f64.ln()).abs() < 1e-12);
        let sparse = vec![(0.0, 1.0), (2.0, 0.25)];
        assert!((interpolate(&sparse, 1.0).unwrap() - 0.625).abs() < 1e-15);
        assert!(curve_distance(&a, &[(5.0, 1.0), (6.0, 1.0)]).is_nan());
    }
}
