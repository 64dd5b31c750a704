//! Line-oriented `section.key = value` configuration.
//!
//! Every key is declared in [`KEYS`] with a type and a default, so a
//! resolved config always carries every key. Unknown keys, bad values and
//! missing required keys are errors naming the key. [`ExperimentConfig::dump`] writes
//! all keys in declaration order; parsing the dump gives back an equal config.

use std::fmt::{self, Write as _};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueType {
    Float,
    Int,
    Bool,
    /// One of the listed words.
    Choice(&'static [&'static str]),
    /// Free text, e.g. a path. May be empty.
    Text,
    FloatList,
    IntList,
    /// Comma-separated `eta/S` cells.
    CellList,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Float(f64),
    Int(u64),
    Bool(bool),
    Text(String),
    FloatList(Vec<f64>),
    IntList(Vec<u64>),
    CellList(Vec<(f64, u64)>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn join<T>(f: &mut fmt::Formatter<'_>, xs: &[T], one: impl Fn(&T) -> String) -> fmt::Result {
            let parts: Vec<String> = xs.iter().map(one).collect();
            write!(f, "{}", parts.join(", "))
        }
        match self {
            Value::Float(x) => write!(f, "{x:?}"),
            Value::Int(x) => write!(f, "{x}"),
            Value::Bool(x) => write!(f, "{x}"),
            Value::Text(s) => write!(f, "{s}"),
            Value::FloatList(xs) => join(f, xs, |x| format!("{x:?}")),
            Value::IntList(xs) => join(f, xs, |x| x.to_string()),
            Value::CellList(xs) => join(f, xs, |(e, s)| format!("{e:?}/{s}")),
        }
    }
}

pub struct KeySpec {
    pub key: &'static str,
    pub ty: ValueType,
    /// `None` marks a required key.
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const KINDS: &[&str] = &["trajectory", "rescaling", "sweep", "cyclic", "memorization", "equilibrium", "interpolation", "probe"];

macro_rules! key {
    ($k:literal, $t:expr, $d:literal, $h:literal) => {
        KeySpec { key: $k, ty: $t, default: Some($d), help: $h }
    };
}

pub static KEYS: &[KeySpec] = &[
    key!("experiment.kind", ValueType::Choice(KINDS), "trajectory", "which experiment `run` executes"),
    key!("experiment.seed", ValueType::Int, "0", "base seed; trajectory i uses seed + i"),
    key!("experiment.seeds", ValueType::Int, "1", "number of seeds per configuration"),
    key!("landscape.kind", ValueType::Choice(&["mlp", "quadratic-bowl", "double-well"]), "mlp", ""),
    key!("landscape.hidden", ValueType::IntList, "16, 16", "MLP hidden widths"),
    key!("landscape.activation", ValueType::Choice(&["tanh", "relu"]), "tanh", ""),
    key!("landscape.init_scale", ValueType::Float, "1.0", "init std is init_scale/sqrt(fan_in)"),
    key!("landscape.dim", ValueType::Int, "10", "bowl dimension"),
    key!("landscape.lambda_min", ValueType::Float, "0.5", "smallest bowl coefficient"),
    key!("landscape.lambda_max", ValueType::Float, "2.0", "largest bowl coefficient"),
    key!("landscape.rotated", ValueType::Bool, "true", "random eigenbasis for the bowl"),
    key!("landscape.well", ValueType::Choice(&["asymmetric", "symmetric", "asymmetric-2d"]), "asymmetric", ""),
    key!("dataset.n", ValueType::Int, "2000", "training examples"),
    key!("dataset.n_val", ValueType::Int, "500", "validation examples"),
    key!("dataset.input_dim", ValueType::Int, "8", ""),
    key!("dataset.classes", ValueType::Int, "4", ""),
    key!("dataset.generator", ValueType::Choice(&["teacher", "blobs"]), "teacher", ""),
    key!("dataset.teacher_hidden", ValueType::IntList, "32", ""),
    key!("dataset.teacher_temperature", ValueType::Float, "0.0", "0 takes the teacher argmax"),
    key!("dataset.teacher_scale", ValueType::Float, "2.0", "teacher init scale"),
    key!("dataset.blob_spread", ValueType::Float, "1.0", ""),
    key!("dataset.corrupt_fraction", ValueType::Float, "0.0", "fraction of training labels replaced"),
    key!(
        "noise.kind",
        ValueType::Choice(&["minibatch", "isotropic", "surrogate-hessian", "surrogate-covariance"]),
        "minibatch",
        ""
    ),
    key!("noise.sampling", ValueType::Choice(&["without-replacement", "with-replacement"]), "without-replacement", ""),
    key!("noise.sigma2", ValueType::Float, "1.0", "isotropic noise variance"),
    key!("noise.refresh", ValueType::Int, "1", "steps between covariance re-estimates"),
    key!(
        "schedule.kind",
        ValueType::Choice(&["constant", "discrete-cyclic-lr", "discrete-cyclic-bs", "triangular-lr"]),
        "constant",
        ""
    ),
    key!("schedule.eta_base", ValueType::Float, "0.02", ""),
    key!("schedule.eta_max", ValueType::Float, "0.1", ""),
    key!("schedule.s_base", ValueType::Int, "25", ""),
    key!("schedule.s_max", ValueType::Int, "125", ""),
    key!("schedule.cycle_length", ValueType::Int, "10", "cycle period in epochs"),
    key!("schedule.momentum", ValueType::Float, "0.0", "heavy-ball momentum"),
    key!("budget.epochs", ValueType::Float, "30.0", ""),
    key!("budget.steps", ValueType::Int, "0", "step budget; 0 uses budget.epochs"),
    key!("budget.record_every", ValueType::Float, "1.0", "epochs between records"),
    key!("budget.stop_train_acc", ValueType::Float, "0.0", "stop once train accuracy reaches this; 0 disables"),
    key!("budget.stop_train_loss", ValueType::Float, "0.0", "stop once train loss is at most reference + this; 0 disables"),
    key!("budget.loss_reference", ValueType::Choice(&["zero", "teacher"]), "zero", "teacher: measure loss above the teacher's"),
    key!("probe.engine", ValueType::Choice(&["auto", "analytic", "grad-finite-difference"]), "auto", ""),
    key!("probe.final", ValueType::Bool, "false", "probe curvature at the last record"),
    key!("probe.epochs", ValueType::FloatList, "", "extra probe epochs"),
    key!("probe.power_iters", ValueType::Int, "200", ""),
    key!("probe.power_tol", ValueType::Float, "1e-6", ""),
    key!("probe.trace_probes", ValueType::Int, "200", ""),
    key!("probe.frob_probes", ValueType::Int, "200", ""),
    key!("probe.checkpoint", ValueType::Text, "", "probe this checkpoint instead of training"),
    key!("probe.compare_init", ValueType::Bool, "false", "also compare noise covariance and Hessian at the initial point"),
    key!("rescaling.factors", ValueType::FloatList, "1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0", ""),
    key!("rescaling.matching_factors", ValueType::FloatList, "2.0, 4.0", "factors that must stay inside the envelope"),
    key!("rescaling.envelope", ValueType::Float, "3.0", "envelope in multiples of the seed std"),
    key!("sweep.etas", ValueType::FloatList, "0.01, 0.02, 0.05, 0.1", ""),
    key!("sweep.batch_sizes", ValueType::IntList, "10, 25, 50, 100", ""),
    key!("sweep.train_acc", ValueType::Float, "0.995", "convergence threshold"),
    key!("sweep.min_corr", ValueType::Float, "0.5", "required |Spearman| for the directional checks"),
    key!("sweep.equal_ratio_cells", ValueType::CellList, "", "cells sharing one ratio; empty picks them from the grid"),
    key!("sweep.equal_ratio_tol", ValueType::Float, "2.0", "allowed spread in pooled seed std"),
    key!("cyclic.ratio", ValueType::Float, "5.0", "max/min of the cycled quantity"),
    key!("memorization.cells", ValueType::CellList, "0.01/50, 0.02/50, 0.05/50, 0.05/25, 0.1/25, 0.2/25", ""),
    key!("memorization.fractions", ValueType::FloatList, "0.25, 0.5", ""),
    key!("memorization.momenta", ValueType::FloatList, "0.0, 0.9", ""),
    key!("memorization.train_acc", ValueType::Float, "0.999", "memorisation threshold"),
    key!("equilibrium.eta", ValueType::Float, "0.01", "bowl learning rate"),
    key!("equilibrium.batch_size", ValueType::Int, "10", "bowl batch size"),
    key!("equilibrium.samples", ValueType::Int, "200000", "recorded bowl samples"),
    key!("equilibrium.thin", ValueType::Int, "20", "steps between bowl samples"),
    key!("equilibrium.burn_in", ValueType::Int, "2000", "bowl burn-in steps"),
    key!("equilibrium.well_eta", ValueType::Float, "0.01", ""),
    key!("equilibrium.well_sigma2", ValueType::Float, "20.0", "isotropic noise variance in the well"),
    key!("equilibrium.well_batch_size", ValueType::Int, "1", ""),
    key!("equilibrium.well_samples", ValueType::Int, "2000000", ""),
    key!("equilibrium.well_thin", ValueType::Int, "10", ""),
    key!("equilibrium.laplace_fractions", ValueType::FloatList, "0.05, 0.025, 0.0125", "temperatures as fractions of the depth gap"),
    key!("interpolation.checkpoint_a", ValueType::Text, "", ""),
    key!("interpolation.checkpoint_b", ValueType::Text, "", ""),
    key!("interpolation.cell_a", ValueType::CellList, "0.01/200", "trained when no checkpoint is given"),
    key!("interpolation.cell_b", ValueType::CellList, "0.1/10", ""),
    key!("interpolation.alpha_min", ValueType::Float, "-0.5", ""),
    key!("interpolation.alpha_max", ValueType::Float, "1.5", ""),
    key!("interpolation.points", ValueType::Int, "41", ""),
];

fn spec_for(key: &str) -> Option<(usize, &'static KeySpec)> {
    KEYS.iter().enumerate().find(|(_, k)| k.key == key)
}

fn parse_value(key: &str, ty: ValueType, raw: &str) -> Result<Value> {
    let raw = raw.trim();
    let err = |what: &str| LabError::config(key, format!("expected {what}, got `{raw}`"));
    let float = |s: &str| s.trim().parse::<f64>().ok().filter(|x| x.is_finite());
    let int = |s: &str| s.trim().parse::<u64>().ok();
    let items = || raw.split(',').map(str::trim).filter(|s| !s.is_empty());
    Ok(match ty {
        ValueType::Float => Value::Float(float(raw).ok_or_else(|| err("a finite number"))?),
        ValueType::Int => Value::Int(int(raw).ok_or_else(|| err("a non-negative integer"))?),
        ValueType::Bool => Value::Bool(match raw {
            "true" => true,
            "false" => false,
            _ => return Err(err("`true` or `false`")),
        }),
        ValueType::Choice(options) => {
            if options.contains(&raw) {
                Value::Text(raw.to_string())
            } else {
                return Err(err(&format!("one of {}", options.join(" | "))));
            }
        }
        ValueType::Text => Value::Text(raw.to_string()),
        ValueType::FloatList => {
            Value::FloatList(items().map(|s| float(s).ok_or_else(|| err("a comma-separated list of numbers"))).collect::<Result<_>>()?)
        }
        ValueType::IntList => Value::IntList(
            items().map(|s| int(s).ok_or_else(|| err("a comma-separated list of integers"))).collect::<Result<_>>()?,
        ),
        ValueType::CellList => Value::CellList(
            items()
                .map(|s| {
                    let (e, b) = s.split_once('/').ok_or_else(|| err("cells written as eta/S"))?;
                    Ok((float(e).ok_or_else(|| err("cells written as eta/S"))?, int(b).ok_or_else(|| err("cells written as eta/S"))?))
                })
                .collect::<Result<_>>()?,
        ),
    })
}

/// A fully resolved configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    values: Vec<Value>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let values = KEYS
            .iter()
            .map(|k| parse_value(k.key, k.ty, k.default.unwrap_or("")).expect("built-in defaults parse"))
            .collect();
        Self { values }
    }
}

impl ExperimentConfig {
    /// Parses config text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = vec![false; KEYS.len()];
        for (i, line) in text.lines().enumerate() {
            let line = match line.find('#') {
                Some(p) => &line[..p],
                None => line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| LabError::Parse { line: i + 1, message: format!("expected `section.key = value`, got `{line}`") })?;
            let key = key.trim();
            let idx = cfg.set(key, value)?;
            seen[idx] = true;
        }
        for (k, s) in KEYS.iter().zip(&seen) {
            if k.default.is_none() && !s {
                return Err(LabError::config(k.key, "missing required key"));
            }
        }
        Ok(cfg)
    }

    /// Applies one `key=value` override. Returns the key's index.
    pub fn set(&mut self, key: &str, value: &str) -> Result<usize> {
        let (idx, spec) = spec_for(key).ok_or_else(|| LabError::config(key, "unknown key"))?;
        self.values[idx] = parse_value(key, spec.ty, value)?;
        Ok(idx)
    }

    /// Applies an override written as `key=value`.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| LabError::config(assignment.trim(), "override must look like key=value"))?;
        self.set(k.trim(), v).map(|_| ())
    }

    pub fn dump(&self) -> String {
        let mut s = String::new();
        let mut section = "";
        for (k, v) in KEYS.iter().zip(&self.values) {
            let sec = k.key.split('.').next().unwrap_or("");
            if sec != section {
                if !section.is_empty() {
                    s.push('\n');
                }
                section = sec;
            }
            writeln!(s, "{} = {}", k.key, v).unwrap();
        }
        s
    }

    /// First 16 hex digits of the SHA-256 of [`ExperimentConfig::dump`].
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let digest = Sha256::digest(self.dump().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn get(&self, key: &str) -> &Value {
        let (idx, _) = spec_for(key).unwrap_or_else(|| panic!("undeclared config key `{key}`"));
        &self.values[idx]
    }

    pub fn f64(&self, key: &str) -> f64 {
        match self.get(key) {
            Value::Float(x) => *x,
            other => panic!("`{key}` is not a float: {other:?}"),
        }
    }

    pub fn u64(&self, key: &str) -> u64 {
        match self.get(key) {
            Value::Int(x) => *x,
            other => panic!("`{key}` is not an integer: {other:?}"),
        }
    }

    pub fn usize(&self, key: &str) -> usize {
        self.u64(key) as usize
    }

    pub fn bool(&self, key: &str) -> bool {
        match self.get(key) {
            Value::Bool(x) => *x,
            other => panic!("`{key}` is not a bool: {other:?}"),
        }
    }

    pub fn str(&self, key: &str) -> &str {
        match self.get(key) {
            Value::Text(s) => s,
            other => panic!("`{key}` is not text: {other:?}"),
        }
    }

    pub fn floats(&self, key: &str) -> &[f64] {
        match self.get(key) {
            Value::FloatList(x) => x,
            other => panic!("`{key}` is not a float list: {other:?}"),
        }
    }

    pub fn ints(&self, key: &str) -> Vec<usize> {
        match self.get(key) {
            Value::IntList(x) => x.iter().map(|&v| v as usize).collect(),
            other => panic!("`{key}` is not an integer list: {other:?}"),
        }
    }

    pub fn cells(&self, key: &str) -> Vec<(f64, usize)> {
        match self.get(key) {
            Value::CellList(x) => x.iter().map(|&(e, s)| (e, s as usize)).collect(),
            other => panic!("`{key}` is not a cell list: {other:?}"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&cfg.dump()).unwrap(), cfg);
    }

    #[test]
    fn comments_and_overrides() {
        let text = "# header\nschedule.eta_base = 0.05  # trailing\n\nexperiment.seeds=3\n";
        let mut cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.f64("schedule.eta_base"), 0.05);
        assert_eq!(cfg.u64("experiment.seeds"), 3);
        cfg.apply_override("schedule.eta_base=0.005").unwrap();
        assert_eq!(cfg.f64("schedule.eta_base"), 0.005);
        assert!(cfg.dump().contains("schedule.eta_base = 0.005\n"));
    }

    #[test]
    fn unknown_key_is_named() {
        match ExperimentConfig::parse("scheduel.eta = 0.1") {
            Err(LabError::Config { key, .. }) => assert_eq!(key, "scheduel.eta"),
            other => panic!("{other:?}"),
        }
        let mut cfg = ExperimentConfig::default();
        assert!(matches!(cfg.apply_override("nope=1"), Err(LabError::Config { key, .. }) if key == "nope"));
    }

    #[test]
    fn type_errors_name_the_key() {
        for bad in ["schedule.eta_base = fast", "experiment.seeds = -1", "probe.final = yes", "landscape.kind = cnn", "memorization.cells = 0.1x5"] {
            let key = bad.split('=').next().unwrap().trim().to_string();
            match ExperimentConfig::parse(bad) {
                Err(LabError::Config { key: k, .. }) => assert_eq!(k, key),
                other => panic!("{bad}: {other:?}"),
            }
        }
        assert!(matches!(ExperimentConfig::parse("just words"), Err(LabError::Parse { line: 1, .. })));
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
        b.set("experiment.seed", "1").unwrap();
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn every_default_parses() {
        for k in KEYS {
            assert!(parse_value(k.key, k.ty, k.default.unwrap_or("")).is_ok(), "{}", k.key);
        }
    }

    proptest! {
        #[test]
        fn dump_parse_round_trip(eta in 1e-9f64..10.0, seeds in 1u64..100, xs in proptest::collection::vec(-1e6f64..1e6, 0..6), cells in proptest::collection::vec((1e-6f64..1.0, 1u64..1000), 0..5)) {
            let mut cfg = ExperimentConfig::default();
            cfg.set("schedule.eta_base", &format!("{eta:?}")).unwrap();
            cfg.set("experiment.seeds", &seeds.to_string()).unwrap();
            cfg.set("probe.epochs", &Value::FloatList(xs).to_string()).unwrap();
            cfg.set("memorization.cells", &Value::CellList(cells).to_string()).unwrap();
            let back = ExperimentConfig::parse(&cfg.dump()).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
