//! End-to-end runs of the `sgd-sde-lab` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_sgd-sde-lab"));
    c.env_remove("SGD_SDE_LAB_OUT");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn artifacts_dir(o: &Output) -> PathBuf {
    let out = stdout(o);
    let line = out.lines().find_map(|l| l.strip_prefix("artifacts: ")).unwrap_or_else(|| panic!("no artifacts line in {out}"));
    PathBuf::from(line)
}

#[test]
fn every_shipped_config_validates() {
    for entry in std::fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        let o = bin().arg("validate-config").arg("-c").arg(&path).output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{}: {}", path.display(), stderr(&o));
        assert!(stdout(&o).contains("experiment.kind = "), "{}", stdout(&o));
    }
}

#[test]
fn override_shows_in_resolved_config() {
    let o = bin()
        .args(["validate-config", "-c"])
        .arg(configs().join("sweep.txt"))
        .args(["--set", "budget.epochs=7", "--seed", "11"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("budget.epochs = 7"), "{text}");
    assert!(text.contains("experiment.seed = 11"), "{text}");
    assert!(text.contains("experiment.kind = sweep"), "{text}");
}

#[test]
fn misspelled_key_is_named_and_fails() {
    let o = bin().args(["validate-config", "--set", "budget.epoks=3"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("budget.epoks"), "{}", stderr(&o));
}

#[test]
fn bad_flag_is_a_usage_error() {
    let o = bin().args(["run", "--no-such-flag"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_epoch_run_writes_one_record() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["run", "--set", "budget.epochs=0", "--set", "experiment.seeds=1", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let run = artifacts_dir(&o);
    assert!(run.starts_with(dir.path()));
    let csv = std::fs::read_to_string(run.join("trajectory_0.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2, "{csv}");
    assert!(lines[0].starts_with("epoch,step,eta,batch_size,ratio,train_loss"));
    assert!(lines[1].starts_with("0,0,"), "{}", lines[1]);
    for f in ["summary.csv", "report.txt", "config.txt"] {
        assert!(run.join(f).is_file(), "{f}");
    }
}

#[test]
fn output_root_comes_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .env("SGD_SDE_LAB_OUT", dir.path())
        .args(["run", "--set", "budget.epochs=0", "--set", "experiment.seeds=1"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(artifacts_dir(&o).starts_with(dir.path()));
}

#[test]
fn unwritable_output_is_an_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = bin()
        .args(["run", "--set", "budget.epochs=0", "--set", "experiment.seeds=1", "--out"])
        .arg(&blocker)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_config_is_an_io_failure() {
    let o = bin().args(["run", "-c", "/nonexistent/config.txt"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn equilibrium_subcommand_runs_the_suite() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["equilibrium", "--set", "equilibrium.samples=2000", "--set", "equilibrium.well_samples=20000", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    // Too few samples for the tolerances; only the wiring is checked.
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let text = stdout(&o);
    for check in ["stationary-variance", "expected-loss", "laplace", "sgd-occupancy"] {
        assert!(text.contains(check), "{check} missing from {text}");
    }
    let run = artifacts_dir(&o);
    assert!(run.starts_with(dir.path().join("equilibrium")));
    let summary = std::fs::read_to_string(run.join("summary.csv")).unwrap();
    assert!(summary.contains("stationary_variance,z0,"), "{summary}");
}

#[test]
fn failed_check_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // An equal-ratio check needs three cells sharing a ratio; this grid has none.
    let o = bin()
        .args([
            "sweep",
            "--set",
            "budget.epochs=0",
            "--set",
            "experiment.seeds=1",
            "--set",
            "dataset.n=100",
            "--set",
            "sweep.etas=0.05, 0.1",
            "--set",
            "sweep.batch_sizes=8, 10",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1), "{}\n{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("FAIL"), "{}", stdout(&o));
}
