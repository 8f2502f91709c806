//! Hardware-counter ingestion.
//!
//! Vendor exports are normalized into a [`CounterDump`]; everything
//! downstream reads only that type. Per-SM quantities come from NVProf-style
//! CSV, the kernel-wide atomic operation count from NCU-style CSV, and the
//! canonical JSON dump carries both.

mod canonical;
mod ncu;
mod nvprof;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::gpu::{GpuError, GpuSpec};

pub use canonical::{parse_canonical, parse_canonical_str, to_canonical_json, write_canonical};
pub use ncu::{parse_ncu_csv, parse_ncu_str, write_ncu_csv, NcuAggregate, NCU_ATOM_SUBSTRING};
pub use nvprof::{parse_nvprof_csv, parse_nvprof_str, write_nvprof_csv, NvprofLayout, NVPROF_METRICS};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("schema violation at `{path}`: {msg}")]
    Schema { path: String, msg: String },

    #[error("invalid `{path}`: {msg}")]
    Field { path: String, msg: String },

    #[error("SM index {0} appears more than once")]
    DuplicateSm(u32),

    #[error("SM index {sm} is not below sm_count {sm_count}")]
    SmOutOfRange { sm: u32, sm_count: u32 },

    #[error("missing metric `{0}`")]
    MissingMetric(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("metric `{metric}` has no value for SM {sm}")]
    MissingValue { sm: u32, metric: String },

    #[error("row {row}, column `{column}`: malformed number `{value}`")]
    MalformedNumber { row: u64, column: String, value: String },

    #[error("malformed CSV: {0}")]
    Csv(String),

    #[error("conflicting values for {0}")]
    Conflict(String),

    #[error("file covers more than one kernel: `{0}` and `{1}`")]
    MultipleKernels(String, String),

    #[error("kernel names differ: `{0}` vs `{1}`")]
    KernelMismatch(String, String),

    #[error(transparent)]
    Gpu(#[from] GpuError),
}

/// Basic per-SM counters of one kernel launch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmCounters {
    #[serde(rename = "sm")]
    pub sm_index: u32,
    /// FAO warp-instructions (`shared_atom`).
    #[serde(rename = "fao")]
    pub fao_warp_instructions: u64,
    /// CAS warp-instructions (`shared_atom_cas`).
    #[serde(rename = "cas")]
    pub cas_warp_instructions: u64,
    pub active_cycles: u64,
    pub achieved_occupancy: f64,
}

impl SmCounters {
    /// Total atomic warp-instructions on this SM.
    pub fn total_jobs(&self) -> u128 {
        u128::from(self.fao_warp_instructions) + u128::from(self.cas_warp_instructions)
    }
}

/// Counters of one kernel launch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterDump {
    pub kernel_name: String,
    pub gpu: GpuSpec,
    /// Thread-level atomic operations over all SMs. Absent when no
    /// NCU-style source was available.
    pub total_atomic_ops: Option<u64>,
    pub per_sm: Vec<SmCounters>,
}

impl CounterDump {
    /// Checks the type invariants. Every parser calls this before returning.
    pub fn validate(&self) -> Result<(), IngestError> {
        self.gpu.validate()?;
        let mut seen = HashSet::with_capacity(self.per_sm.len());
        for (i, sm) in self.per_sm.iter().enumerate() {
            if !seen.insert(sm.sm_index) {
                return Err(IngestError::DuplicateSm(sm.sm_index));
            }
            if sm.sm_index >= self.gpu.sm_count {
                return Err(IngestError::SmOutOfRange {
                    sm: sm.sm_index,
                    sm_count: self.gpu.sm_count,
                });
            }
            let o = sm.achieved_occupancy;
            if !(o.is_finite() && (0.0..=1.0).contains(&o)) {
                return Err(IngestError::Field {
                    path: format!("per_sm[{i}].achieved_occupancy"),
                    msg: format!("{o} is outside [0, 1]"),
                });
            }
            if sm.total_jobs() > 0 && sm.active_cycles == 0 {
                return Err(IngestError::Field {
                    path: format!("per_sm[{i}].active_cycles"),
                    msg: "must be positive when the SM executed atomics".into(),
                });
            }
        }
        Ok(())
    }

    /// Sum of `N_f + N_c` over all SMs.
    pub fn total_jobs(&self) -> u128 {
        self.per_sm.iter().map(SmCounters::total_jobs).sum()
    }

    pub(crate) fn sort_by_sm(&mut self) {
        self.per_sm.sort_by_key(|s| s.sm_index);
    }
}

/// Fills in the kernel-wide operation count of a per-SM dump.
///
/// Per-SM values are never touched. An empty kernel name on either side
/// matches anything.
pub fn merge(per_sm: CounterDump, aggregate: &NcuAggregate) -> Result<CounterDump, IngestError> {
    let (a, b) = (&per_sm.kernel_name, &aggregate.kernel_name);
    if !a.is_empty() && !b.is_empty() && a != b {
        return Err(IngestError::KernelMismatch(a.clone(), b.clone()));
    }
    let kernel_name = if a.is_empty() { b.clone() } else { a.clone() };
    Ok(CounterDump {
        kernel_name,
        total_atomic_ops: Some(aggregate.total_atomic_ops),
        ..per_sm
    })
}

/// Parses a count that may be written as an integer or as an integral float
/// (`1.5e3`). Thousands separators are tolerated.
pub(crate) fn parse_count(raw: &str) -> Option<u64> {
    let cleaned: String = raw.trim().chars().filter(|c| *c != ',').collect();
    if let Ok(v) = cleaned.parse::<u64>() {
        return Some(v);
    }
    let v: f64 = cleaned.parse().ok()?;
    // 2^64 is exactly representable; anything at or above it overflows u64.
    (v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v < 18_446_744_073_709_551_616.0).then_some(v as u64)
}

/// Whether `line` is a profiler banner such as `==1234== ...` or
/// `==PROF== ...`.
fn is_banner(line: &str) -> bool {
    let Some(rest) = line.trim_start().strip_prefix("==") else {
        return false;
    };
    let tag = rest.split("==").next().unwrap_or("");
    rest.len() > tag.len() && !tag.is_empty() && tag.chars().all(|c| c.is_ascii_alphanumeric())
}

/// Drops banner and blank lines that profilers print around the CSV body.
pub(crate) fn strip_banner(text: &str) -> String {
    text.lines()
        .filter(|l| !is_banner(l) && !l.trim().is_empty())
        .map(|l| format!("{l}\n"))
        .collect()
}
