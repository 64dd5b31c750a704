//! Artifact assembly and the on-disk layout
//! `<out>/<experiment>/<hash>/{summary.csv, report.txt, config.txt, trajectory_<seed>.csv, charts/*.svg}`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use super::chart::Chart;
use super::config::ExperimentConfig;
use crate::error::Result;

/// One pass/fail line of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Everything an experiment writes, held in memory so it can be inspected
/// before (or instead of) touching the filesystem.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub experiment: String,
    pub summary_header: String,
    pub summary_rows: Vec<String>,
    /// Extra files (trajectory CSVs) by path relative to the run directory.
    pub files: Vec<(String, String)>,
    pub report: Vec<String>,
    pub checks: Vec<Check>,
    pub charts: Vec<(String, Chart)>,
    /// Set when a cancel request cut the run short.
    pub truncated: bool,
}

impl ExperimentOutput {
    pub fn new(experiment: &str, summary_header: &str) -> Self {
        Self { experiment: experiment.to_string(), summary_header: summary_header.to_string(), ..Self::default() }
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&mut self, check: Check) {
        self.checks.push(check);
    }

    /// Summary CSV body without the timestamp line.
    pub fn summary_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.summary_header);
        s.push('\n');
        for r in &self.summary_rows {
            s.push_str(r);
            s.push('\n');
        }
        if self.truncated {
            s.push_str("# truncated=true\n");
        }
        s
    }

    pub fn report_text(&self) -> String {
        let mut s = String::new();
        for l in &self.report {
            s.push_str(l);
            s.push('\n');
        }
        if !self.report.is_empty() && !self.checks.is_empty() {
            s.push('\n');
        }
        for c in &self.checks {
            s.push_str(&c.line());
            s.push('\n');
        }
        s
    }
}

/// Directory the artifacts of `cfg` land in under `root`.
pub fn run_directory(root: &Path, experiment: &str, cfg: &ExperimentConfig) -> PathBuf {
    root.join(experiment).join(cfg.hash())
}

/// Writes all artifacts and returns the run directory. The first line of
/// `summary.csv` is `# created_unix=<seconds>`; everything after it is a
/// pure function of the config.
pub fn write_artifacts(root: &Path, cfg: &ExperimentConfig, out: &ExperimentOutput) -> Result<PathBuf> {
    let dir = run_directory(root, &out.experiment, cfg);
    fs::create_dir_all(&dir)?;
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    fs::write(dir.join("summary.csv"), format!("# created_unix={created}\n{}", out.summary_csv()))?;
    fs::write(dir.join("report.txt"), out.report_text())?;
    fs::write(dir.join("config.txt"), cfg.dump())?;
    for (rel, body) in &out.files {
        let path = dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, body)?;
    }
    if !out.charts.is_empty() {
        let charts = dir.join("charts");
        fs::create_dir_all(&charts)?;
        for (name, chart) in &out.charts {
            fs::write(charts.join(format!("{name}.svg")), chart.to_svg())?;
        }
    }
    Ok(dir)
}

/// `summary.csv` contents with the timestamp line removed.
pub fn strip_timestamp(summary: &str) -> &str {
    match summary.strip_prefix("# created_unix=") {
        Some(rest) => rest.split_once('\n').map_or("", |(_, body)| body),
        None => summary,
    }
}

/// Formats an optional float for CSV, empty when absent.
pub fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::chart::{Series, Style};

    #[test]
    fn layout_and_timestamp() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig::default();
        let mut out = ExperimentOutput::new("demo", "a,b");
        out.summary_rows.push("1,2".into());
        out.files.push(("cells/x/trajectory_0.csv".into(), "epoch\n0\n".into()));
        out.check(Check::new("thing", true, "ok"));
        out.charts.push(("c".into(), Chart::new("t", "x", "y", Style::Lines).with(Series::new("s", vec![(0.0, 1.0)]))));
        let run = write_artifacts(dir.path(), &cfg, &out).unwrap();
        assert_eq!(run, dir.path().join("demo").join(cfg.hash()));
        let summary = fs::read_to_string(run.join("summary.csv")).unwrap();
        assert!(summary.starts_with("# created_unix="));
        assert_eq!(strip_timestamp(&summary), "a,b\n1,2\n");
        assert!(run.join("cells/x/trajectory_0.csv").exists());
        assert!(run.join("charts/c.svg").exists());
        assert_eq!(ExperimentConfig::parse(&fs::read_to_string(run.join("config.txt")).unwrap()).unwrap(), cfg);
        assert!(fs::read_to_string(run.join("report.txt")).unwrap().contains("PASS thing: ok"));
    }

    #[test]
    fn truncated_footer() {
        let mut out = ExperimentOutput::new("demo", "a");
        out.truncated = true;
        assert!(out.summary_csv().ends_with("# truncated=true\n"));
    }
}
