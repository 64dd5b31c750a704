//! Command-line front end: resolves a config from file, overrides and flags,
//! runs the mapped experiment and writes its artifacts.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;

use clap::{Args, Parser, Subcommand};

use crate::error::LabError;
use crate::experiments::{run_experiment, setup, write_artifacts, ExperimentConfig, RunOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_IO: i32 = 2;

pub const OUT_ENV: &str = "SGD_SDE_LAB_OUT";

#[derive(Debug, Parser)]
#[command(name = "sgd-sde-lab", version, about = "SGD noise-scale experiments on toy landscapes and small MLPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment named by `experiment.kind`.
    Run(Common),
    /// Ratio sweep over the (eta, S) grid.
    Sweep(Common),
    /// Stationary-variance, expected-loss and occupancy checks.
    Equilibrium(Common),
    /// Curvature probes at a trained or checkpointed point.
    Probe(Common),
    /// Loss along the line between two trained points.
    Interpolate(Common),
    /// Print the resolved config and exit.
    ValidateConfig(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Config file of `section.key = value` lines.
    #[arg(short = 'c', long = "config")]
    config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Artifact root directory.
    #[arg(long, env = OUT_ENV, default_value = "out")]
    out: PathBuf,
    /// Replaces `experiment.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for grid cells; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Run,
    Sweep,
    Equilibrium,
    Probe,
    Interpolate,
    ValidateConfig,
}

impl Action {
    /// The `experiment.kind` this subcommand forces, if any.
    pub fn forced_kind(self) -> Option<&'static str> {
        match self {
            Action::Sweep => Some("sweep"),
            Action::Equilibrium => Some("equilibrium"),
            Action::Probe => Some("probe"),
            Action::Interpolate => Some("interpolation"),
            Action::Run | Action::ValidateConfig => None,
        }
    }
}

/// A parsed command line with its fully resolved config.
#[derive(Debug, Clone)]
pub struct CliInvocation {
    pub action: Action,
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub workers: usize,
    pub config: ExperimentConfig,
}

/// Failure of [`parse_and_validate`], carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Help, version or a malformed command line; clap renders these.
    Usage(clap::Error),
    Lab(LabError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(e) if !e.use_stderr() => EXIT_OK,
            CliError::Usage(_) => EXIT_IO,
            CliError::Lab(LabError::Io(_)) => EXIT_IO,
            CliError::Lab(_) => EXIT_FAILED,
        }
    }
}

impl From<LabError> for CliError {
    fn from(e: LabError) -> Self {
        CliError::Lab(e)
    }
}

/// Parses `argv` (program name first), loads the config file, applies the
/// overrides, the subcommand's experiment kind and `--seed`, then validates.
pub fn parse_and_validate<I, T>(argv: I) -> std::result::Result<CliInvocation, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(CliError::Usage)?;
    let (action, common) = match cli.command {
        Command::Run(c) => (Action::Run, c),
        Command::Sweep(c) => (Action::Sweep, c),
        Command::Equilibrium(c) => (Action::Equilibrium, c),
        Command::Probe(c) => (Action::Probe, c),
        Command::Interpolate(c) => (Action::Interpolate, c),
        Command::ValidateConfig(c) => (Action::ValidateConfig, c),
    };
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::parse(&fs::read_to_string(path).map_err(LabError::from)?)?,
        None => ExperimentConfig::default(),
    };
    for o in &common.overrides {
        config.apply_override(o)?;
    }
    if let Some(kind) = action.forced_kind() {
        config.set("experiment.kind", kind)?;
    }
    if let Some(seed) = common.seed {
        config.set("experiment.seed", &seed.to_string())?;
    }
    setup::validate(&config)?;
    Ok(CliInvocation {
        action,
        config_path: common.config,
        overrides: common.overrides,
        out: common.out,
        seed: common.seed,
        workers: common.workers,
        config,
    })
}

/// Runs the invocation, prints one line per check and returns the exit
/// code. Output goes to `stdout`; errors go to `stderr`.
pub fn execute(inv: &CliInvocation, cancel: Option<&AtomicBool>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    if inv.action == Action::ValidateConfig {
        let _ = write!(stdout, "{}", inv.config.dump());
        return EXIT_OK;
    }
    let opts = RunOptions { workers: inv.workers, cancel };
    let output = match run_experiment(&inv.config, opts) {
        Ok(o) => o,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return if matches!(e, LabError::Io(_)) { EXIT_IO } else { EXIT_FAILED };
        }
    };
    let dir = match write_artifacts(&inv.out, &inv.config, &output) {
        Ok(d) => d,
        Err(e) => {
            let _ = writeln!(stderr, "error writing artifacts: {e}");
            return EXIT_IO;
        }
    };
    for c in &output.checks {
        let _ = writeln!(stdout, "{}", c.line());
    }
    let _ = writeln!(stdout, "artifacts: {}", dir.display());
    if output.truncated {
        let _ = writeln!(stderr, "interrupted; partial results written");
        return EXIT_FAILED;
    }
    if output.all_passed() {
        EXIT_OK
    } else {
        EXIT_FAILED
    }
}

/// Parses and executes, reporting parse errors. Used by the binary.
pub fn main_with_args<I, T>(argv: I, cancel: Option<&AtomicBool>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match parse_and_validate(argv) {
        Ok(inv) => execute(&inv, cancel, &mut std::io::stdout().lock(), &mut std::io::stderr().lock()),
        Err(e) => {
            let code = e.exit_code();
            match e {
                CliError::Usage(u) => {
                    let _ = u.print();
                }
                CliError::Lab(l) => eprintln!("error: {l}"),
            }
            code
        }
    }
}
