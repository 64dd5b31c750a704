//! Plain-text parameter checkpoints.
//!
//! Format: a header line `q=<int> kind=<landscape-kind>` followed by one
//! value per line in `{:.16e}` form (17 significant digits, which
//! round-trips every `f64` exactly).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{LandscapeKind, ParameterVector};
use crate::error::{LabError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: LandscapeKind,
    pub parameters: ParameterVector,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut s = format!("q={} kind={}\n", self.parameters.len(), self.kind);
        for v in self.parameters.iter() {
            writeln!(s, "{v:.16e}").unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(LabError::Parse { line: 1, message: "empty checkpoint".into() })?;
        let mut q = None;
        let mut kind = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("q", v)) => q = v.parse::<usize>().ok(),
                Some(("kind", v)) => kind = LandscapeKind::parse(v),
                _ => {
                    return Err(LabError::Parse { line: 1, message: format!("unexpected header field `{field}`") });
                }
            }
        }
        let (q, kind) = match (q, kind) {
            (Some(q), Some(k)) => (q, k),
            _ => return Err(LabError::Parse { line: 1, message: "header must be `q=<int> kind=<kind>`".into() }),
        };
        let mut values = Vec::with_capacity(q);
        for (i, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let v = line
                .parse::<f64>()
                .map_err(|e| LabError::Parse { line: i + 2, message: format!("bad value `{line}`: {e}") })?;
            values.push(v);
        }
        if values.len() != q {
            return Err(LabError::Parse {
                line: values.len() + 1,
                message: format!("header declares q={q} but found {} values", values.len()),
            });
        }
        Ok(Self { kind, parameters: ParameterVector::new(values)? })
    }
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    fs::write(path, checkpoint.to_text())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_text(&fs::read_to_string(path)?)
}
