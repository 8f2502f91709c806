//! Closed-form service-time family used to synthesize calibration tables.

use serde::{Deserialize, Serialize};

use super::{ServiceFunction, SimError};
use crate::gpu::GpuSpec;
use crate::param_table::ParamTable;

/// `S(n, e, c) = (alpha * e + beta) * (1 + gamma * c / n) / min(n, pipe_width) + delta`
///
/// `alpha` is the per-active-thread serialization cost, `beta` the fixed cost
/// of a warp-instruction, `gamma` the relative CAS surcharge, `delta` a floor
/// that no amount of pipelining removes, and `pipe_width` the load beyond
/// which extra warps stop helping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticFamily {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub pipe_width: u32,
}

impl Default for SyntheticFamily {
    fn default() -> Self {
        SyntheticFamily {
            alpha: 16.0,
            beta: 64.0,
            gamma: 1.0,
            delta: 4.0,
            pipe_width: 32,
        }
    }
}

impl SyntheticFamily {
    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [("alpha", self.alpha), ("beta", self.beta), ("delta", self.delta)];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(SimError::InvalidFamily(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(SimError::InvalidFamily(format!(
                "gamma must be nonnegative, got {}",
                self.gamma
            )));
        }
        if self.pipe_width == 0 {
            return Err(SimError::InvalidFamily("pipe_width must be at least 1".into()));
        }
        Ok(())
    }

    pub fn describe(&self) -> String {
        format!(
            "synthetic alpha={} beta={} gamma={} delta={} pipe_width={}",
            self.alpha, self.beta, self.gamma, self.delta, self.pipe_width
        )
    }
}

impl ServiceFunction for SyntheticFamily {
    fn service_time(&self, n: f64, e: f64, c: f64) -> f64 {
        let n = n.max(1.0);
        let width = n.min(f64::from(self.pipe_width));
        (self.alpha * e + self.beta) * (1.0 + self.gamma * c / n) / width + self.delta
    }
}

/// Tabulates `family` on the full grid of `gpu`.
///
/// Stored totals must be whole cycles, so the per-job service time is
/// rounded to the nearest cycle first and the total is `n` times that.
/// Rounding is monotone, so the family's trends survive: `S` never rises
/// with `n` and never falls with `e` or `c`.
pub fn synthesize_table(gpu: &GpuSpec, family: &SyntheticFamily) -> Result<ParamTable, SimError> {
    family.validate()?;
    let table = ParamTable::from_fn(gpu.clone(), family.describe(), |cell| {
        let s = family
            .service_time(cell.n.into(), cell.e.into(), cell.c.into())
            .round();
        u64::from(cell.n) * (s as u64)
    })?;
    Ok(table)
}
