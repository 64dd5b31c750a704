use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Constant,
    /// `η` alternates between `eta_max` (first half of each cycle) and
    /// `eta_base`; `S = s_base`.
    DiscreteCyclicLr,
    /// `S` alternates between `s_base` (first half) and `s_max`; `η = eta_base`.
    DiscreteCyclicBs,
    /// `η` ramps linearly from `eta_base` to `eta_max` at mid-cycle and back;
    /// `S = s_base`.
    TriangularLr,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::Constant => "constant",
            ScheduleKind::DiscreteCyclicLr => "discrete-cyclic-lr",
            ScheduleKind::DiscreteCyclicBs => "discrete-cyclic-bs",
            ScheduleKind::TriangularLr => "triangular-lr",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "constant" => Some(ScheduleKind::Constant),
            "discrete-cyclic-lr" => Some(ScheduleKind::DiscreteCyclicLr),
            "discrete-cyclic-bs" => Some(ScheduleKind::DiscreteCyclicBs),
            "triangular-lr" => Some(ScheduleKind::TriangularLr),
            _ => None,
        }
    }
}

/// Time-varying `(η, S)`. The cycle position is taken from the epoch
/// counter at the start of each step; `cycle_length` is the full period in
/// epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub eta_base: f64,
    pub eta_max: f64,
    pub s_base: usize,
    pub s_max: usize,
    pub cycle_length: f64,
}

impl Schedule {
    pub fn constant(eta: f64, batch_size: usize) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            eta_base: eta,
            eta_max: eta,
            s_base: batch_size,
            s_max: batch_size,
            cycle_length: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta_base > 0.0 && self.eta_base.is_finite()) {
            return Err(LabError::invalid(format!("eta_base must be positive, got {}", self.eta_base)));
        }
        if self.s_base == 0 {
            return Err(LabError::invalid("s_base must be at least 1"));
        }
        if self.kind != ScheduleKind::Constant {
            if !(self.eta_max > 0.0 && self.eta_max.is_finite()) {
                return Err(LabError::invalid(format!("eta_max must be positive, got {}", self.eta_max)));
            }
            if self.s_max == 0 {
                return Err(LabError::invalid("s_max must be at least 1"));
            }
            if !(self.cycle_length > 0.0) {
                return Err(LabError::invalid("cycle_length must be positive"));
            }
        }
        Ok(())
    }

    /// Position in the current cycle, in `[0, 1)`.
    fn phase(&self, epoch: f64) -> f64 {
        (epoch / self.cycle_length).rem_euclid(1.0)
    }

    /// `(η_k, S_k)` for a step starting at `epoch`.
    pub fn at(&self, epoch: f64) -> (f64, usize) {
        match self.kind {
            ScheduleKind::Constant => (self.eta_base, self.s_base),
            ScheduleKind::DiscreteCyclicLr => {
                let eta = if self.phase(epoch) < 0.5 { self.eta_max } else { self.eta_base };
                (eta, self.s_base)
            }
            ScheduleKind::DiscreteCyclicBs => {
                let s = if self.phase(epoch) < 0.5 { self.s_base } else { self.s_max };
                (self.eta_base, s)
            }
            ScheduleKind::TriangularLr => {
                let ramp = 1.0 - (2.0 * self.phase(epoch) - 1.0).abs();
                (self.eta_base + (self.eta_max - self.eta_base) * ramp, self.s_base)
            }
        }
    }

    /// Largest batch size the schedule ever requests.
    pub fn max_batch_size(&self) -> usize {
        match self.kind {
            ScheduleKind::DiscreteCyclicBs => self.s_base.max(self.s_max),
            _ => self.s_base,
        }
    }
}
