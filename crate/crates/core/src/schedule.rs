//! Monotone divergence-weight schedules for α.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    Cosine,
    Linear,
    Step,
}

impl std::str::FromStr for ScheduleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "constant" => Ok(Self::Constant),
            "cosine" => Ok(Self::Cosine),
            "linear" => Ok(Self::Linear),
            "step" => Ok(Self::Step),
            other => Err(format!(
                "unknown schedule kind `{other}` (expected constant, cosine, linear or step)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScheduleError {
    #[error("alpha_min must be positive and finite, got {0}")]
    AlphaMin(f64),
    #[error("alpha_max ({max}) must be finite and >= alpha_min ({min})")]
    AlphaMax { min: f64, max: f64 },
    #[error("schedule_end_iter must be positive")]
    EndIter,
    #[error("step_period must be positive")]
    StepPeriod,
}

/// α as a function of the training iteration.
///
/// Every kind starts at `alpha_min`, is non-decreasing, and equals
/// `alpha_max` from `schedule_end_iter` on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSchedule {
    pub kind: ScheduleKind,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub schedule_end_iter: u64,
    #[serde(default = "default_step_period")]
    pub step_period: u64,
}

fn default_step_period() -> u64 {
    30_000
}

impl Default for DivergenceSchedule {
    fn default() -> Self {
        Self::constant(1.0)
    }
}

impl DivergenceSchedule {
    pub fn constant(alpha: f64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            alpha_min: alpha,
            alpha_max: alpha,
            schedule_end_iter: 1,
            step_period: default_step_period(),
        }
    }

    pub fn linear(alpha_min: f64, alpha_max: f64, end: u64) -> Self {
        Self {
            kind: ScheduleKind::Linear,
            alpha_min,
            alpha_max,
            schedule_end_iter: end,
            step_period: default_step_period(),
        }
    }

    pub fn cosine(alpha_min: f64, alpha_max: f64, end: u64) -> Self {
        Self {
            kind: ScheduleKind::Cosine,
            ..Self::linear(alpha_min, alpha_max, end)
        }
    }

    pub fn step(alpha_min: f64, alpha_max: f64, period: u64, end: u64) -> Self {
        Self {
            kind: ScheduleKind::Step,
            alpha_min,
            alpha_max,
            schedule_end_iter: end,
            step_period: period,
        }
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.alpha_min > 0.0 && self.alpha_min.is_finite()) {
            return Err(ScheduleError::AlphaMin(self.alpha_min));
        }
        if !(self.alpha_max >= self.alpha_min && self.alpha_max.is_finite()) {
            return Err(ScheduleError::AlphaMax {
                min: self.alpha_min,
                max: self.alpha_max,
            });
        }
        if self.schedule_end_iter == 0 {
            return Err(ScheduleError::EndIter);
        }
        if self.kind == ScheduleKind::Step && self.step_period == 0 {
            return Err(ScheduleError::StepPeriod);
        }
        Ok(())
    }

    pub fn is_constant(&self) -> bool {
        self.kind == ScheduleKind::Constant || self.alpha_min == self.alpha_max
    }

    /// α at iteration `iter`.
    pub fn alpha_at(&self, iter: u64) -> f64 {
        let (lo, hi) = (self.alpha_min, self.alpha_max);
        if self.kind == ScheduleKind::Constant {
            return lo;
        }
        if iter >= self.schedule_end_iter {
            return hi;
        }
        let frac = iter as f64 / self.schedule_end_iter as f64;
        match self.kind {
            ScheduleKind::Constant => lo,
            ScheduleKind::Linear => lo + (hi - lo) * frac,
            // Reversed half-cosine anneal: increases from lo to hi.
            ScheduleKind::Cosine => lo + (hi - lo) * (1.0 - (std::f64::consts::PI * frac).cos()) / 2.0,
            ScheduleKind::Step => {
                let doublings = (iter / self.step_period).min(1100) as i32;
                (lo * 2f64.powi(doublings)).min(hi)
            }
        }
    }
}

/// Free-function form of [`DivergenceSchedule::alpha_at`].
pub fn schedule_alpha(s: &DivergenceSchedule, iter: u64) -> f64 {
    s.alpha_at(iter)
}
