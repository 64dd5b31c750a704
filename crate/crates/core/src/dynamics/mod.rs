//! Discrete SGD, its Euler–Maruyama SDE counterpart and the exact OU
//! propagator, under arbitrary `(η, S)` schedules.
//!
//! Seeds: trajectory `i` of an experiment uses `base_seed + i`. Each seed is
//! split into ChaCha8 streams: 0 for parameter initialisation, 1 for the
//! dynamics noise, 2 for curvature probes.

mod optimizer;
mod ou;
mod rescale;
mod schedule;
mod trajectory;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use optimizer::{euler_maruyama_step, sgd_step, OptimizerState};
pub use ou::{ou_analytic_sample, OuProcess};
pub use rescale::{rescale_config, RescaledConfig};
pub use schedule::{Schedule, ScheduleKind};
pub use trajectory::{
    curve_distance, interpolate, run_trajectory, sample_path, Budget, Divergence, PathSamples, RecordRow, RunRecord,
    TrajectorySpec,
    DIVERGENCE_FACTOR, TRAJECTORY_CSV_HEADER,
};

/// Stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
