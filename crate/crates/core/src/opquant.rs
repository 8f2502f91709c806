//! Derived operational quantities and the per-SM utilization verdict.
//!
//! From the basic counters of SM `i`:
//!
//! | quantity | derivation |
//! |---|---|
//! | `N` | `N_f + N_c` |
//! | `n̂` | `o * warps_per_sm` |
//! | `e` | `O / Σ N` (kernel-wide) |
//! | `c` | `n̂ * N_c / N` |
//! | `S` | table service time at `(n̂, e, c)` |
//! | `B` | `N * S` |
//! | `U` | `B / T` |

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gpu::{GpuSpec, WARP_SIZE};
use crate::ingest::{CounterDump, SmCounters};
use crate::param_table::{ParamTable, TableError};

/// Median utilization at or above which the atomic unit is the bottleneck.
pub const BOUND_THRESHOLD: f64 = 0.9;
/// Median utilization at or above which the atomic unit matters.
pub const SIGNIFICANT_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Table(#[from] TableError),

    #[error("the dump has no total atomic operation count; supply an NCU export or an assumed e")]
    MissingO,

    #[error("no shared-memory atomics executed")]
    NoAtomicJobs,

    #[error("SM {sm}: zero occupancy but {jobs} atomic jobs; counters are inconsistent")]
    ZeroLoad { sm: u32, jobs: u64 },

    #[error("SM {sm}: {msg}")]
    InvalidCounters { sm: u32, msg: String },

    #[error("dump was collected on `{dump}` but the table is for `{table}`")]
    GpuMismatch { dump: String, table: String },

    #[error("the dump has no per-SM counters")]
    EmptyDump,

    #[error("assumed e = {0} is not a finite positive number")]
    InvalidAssumedE(f64),
}

/// Diagnostics attached to derived quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// Estimated utilization above 100%.
    Over100,
    /// Average parallelism exceeded the table's load range.
    ClampedN,
    /// Average active threads fell outside `[1, 32]`.
    ClampedE,
    /// `e` came from the user, not from counters.
    AssumedE,
    /// POPC.INC jobs were looked up on the FAO axis.
    PopcAsFao,
}

impl Flag {
    pub fn caveat(self) -> &'static str {
        match self {
            Flag::Over100 => {
                "estimated utilization exceeds 100% on some SMs; achieved occupancy likely overestimates the atomic unit's load"
            }
            Flag::ClampedN => "average parallelism exceeded the table's load range and was clamped to warps_per_sm",
            Flag::ClampedE => "average active threads per job fell outside [1, 32] and was clamped",
            Flag::AssumedE => "e was not measured; a user-supplied value was assumed",
            Flag::PopcAsFao => "POPC.INC jobs were costed with the FAO service time; the table has no POPC calibration",
        }
    }
}

impl fmt::Display for Flag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Flag::Over100 => "over_100",
            Flag::ClampedN => "clamped_n",
            Flag::ClampedE => "clamped_e",
            Flag::AssumedE => "assumed_e",
            Flag::PopcAsFao => "popc_as_fao",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ESource {
    Derived,
    Assumed,
}

/// Average active threads per job, shared by every SM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveThreads {
    /// Value used for lookups, within `[1, 32]`.
    pub value: f64,
    /// Value before clamping.
    pub raw: f64,
    pub source: ESource,
    pub clamped: bool,
}

impl ActiveThreads {
    fn new(raw: f64, source: ESource) -> Self {
        let value = raw.clamp(1.0, f64::from(WARP_SIZE));
        ActiveThreads {
            value,
            raw,
            source,
            clamped: value != raw,
        }
    }

    fn flags(&self) -> impl Iterator<Item = Flag> {
        let assumed = (self.source == ESource::Assumed).then_some(Flag::AssumedE);
        let clamped = self.clamped.then_some(Flag::ClampedE);
        assumed.into_iter().chain(clamped)
    }
}

/// Derived quantities of one SM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedQuantities {
    pub sm_index: u32,
    /// `N`
    pub total_jobs: u64,
    /// `n̂`
    pub avg_parallelism: f64,
    /// `e`; absent when the kernel ran no atomics.
    pub avg_active_threads: Option<f64>,
    /// `c`
    pub avg_queued_cas: f64,
    /// `S`; absent when the SM ran no atomics.
    pub service_time_cycles: Option<f64>,
    /// `B`
    pub busy_cycles: f64,
    /// `T`
    pub active_cycles: u64,
    /// `U`, never capped.
    pub utilization: f64,
    pub flags: BTreeSet<Flag>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    NoAtomics,
    AtomicUnitBound,
    Significant,
    NotABottleneck,
}

impl Verdict {
    /// Heuristic banding of the median utilization.
    pub fn from_utilization(u: f64) -> Self {
        if u >= BOUND_THRESHOLD {
            Verdict::AtomicUnitBound
        } else if u >= SIGNIFICANT_THRESHOLD {
            Verdict::Significant
        } else {
            Verdict::NotABottleneck
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::NoAtomics => "no shared-memory atomics executed",
            Verdict::AtomicUnitBound => "atomic-unit bound",
            Verdict::Significant => "significant",
            Verdict::NotABottleneck => "not a bottleneck",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min_utilization: f64,
    pub median_utilization: f64,
    pub max_utilization: f64,
    pub verdict: Verdict,
}

/// Per-SM results of one kernel launch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub kernel_name: String,
    pub gpu: GpuSpec,
    pub active_threads: Option<ActiveThreads>,
    pub per_sm: Vec<DerivedQuantities>,
    pub summary: Summary,
    /// Union of every SM's flags.
    pub flags: BTreeSet<Flag>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AnalysisOptions {
    /// `e` to use when the dump has no total operation count.
    pub assume_e: Option<f64>,
    /// The kernel's FAO jobs are POPC.INC instructions.
    pub popc_inc: bool,
    /// Analyze even if the dump and table name different GPUs.
    pub allow_gpu_mismatch: bool,
}

/// Kernel-wide average active threads per job, `O / Σ N`.
pub fn derive_e(dump: &CounterDump) -> Result<ActiveThreads, AnalysisError> {
    let ops = dump.total_atomic_ops.ok_or(AnalysisError::MissingO)?;
    let jobs = dump.total_jobs();
    if jobs == 0 {
        return Err(AnalysisError::NoAtomicJobs);
    }
    Ok(ActiveThreads::new(ops as f64 / jobs as f64, ESource::Derived))
}

/// Derived quantities of one SM.
///
/// When `n̂` exceeds the table's load range the lookup happens at
/// `warps_per_sm` with `c` rescaled to keep the SM's CAS share, and the
/// result is flagged. The reported `n̂` and `c` stay unclamped.
pub fn derive_sm(sm: &SmCounters, e: f64, gpu: &GpuSpec, table: &ParamTable) -> Result<DerivedQuantities, AnalysisError> {
    let jobs = sm
        .fao_warp_instructions
        .checked_add(sm.cas_warp_instructions)
        .ok_or_else(|| AnalysisError::InvalidCounters {
            sm: sm.sm_index,
            msg: "job count overflows".into(),
        })?;
    let n_hat = sm.achieved_occupancy * f64::from(gpu.warps_per_sm);
    let mut out = DerivedQuantities {
        sm_index: sm.sm_index,
        total_jobs: jobs,
        avg_parallelism: n_hat,
        avg_active_threads: Some(e),
        avg_queued_cas: 0.0,
        service_time_cycles: None,
        busy_cycles: 0.0,
        active_cycles: sm.active_cycles,
        utilization: 0.0,
        flags: BTreeSet::new(),
    };
    if jobs == 0 {
        return Ok(out);
    }
    if n_hat == 0.0 {
        return Err(AnalysisError::ZeroLoad { sm: sm.sm_index, jobs });
    }
    if sm.active_cycles == 0 {
        return Err(AnalysisError::InvalidCounters {
            sm: sm.sm_index,
            msg: "active_cycles is zero but atomics executed".into(),
        });
    }

    let cas_share = sm.cas_warp_instructions as f64 / jobs as f64;
    out.avg_queued_cas = n_hat * cas_share;

    let n_max = f64::from(table.n_max());
    let (n_eff, c_eff) = if n_hat > n_max {
        out.flags.insert(Flag::ClampedN);
        (n_max, n_max * cas_share)
    } else {
        (n_hat, out.avg_queued_cas)
    };
    let lookup = table.service_time(n_eff, e, c_eff)?;
    if lookup.clamps.e {
        out.flags.insert(Flag::ClampedE);
    }
    if lookup.clamps.n || lookup.clamps.c {
        out.flags.insert(Flag::ClampedN);
    }

    let s = lookup.cycles;
    out.service_time_cycles = Some(s);
    out.busy_cycles = jobs as f64 * s;
    out.utilization = out.busy_cycles / sm.active_cycles as f64;
    if out.utilization > 1.0 {
        out.flags.insert(Flag::Over100);
    }
    Ok(out)
}

fn median(sorted: &[f64]) -> f64 {
    let m = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[m]
    } else {
        0.5 * (sorted[m - 1] + sorted[m])
    }
}

/// Analyzes every SM of a kernel launch.
pub fn derive_all(dump: &CounterDump, table: &ParamTable, opts: &AnalysisOptions) -> Result<Analysis, AnalysisError> {
    if !opts.allow_gpu_mismatch && !dump.gpu.compatible_with(table.gpu()) {
        return Err(AnalysisError::GpuMismatch {
            dump: dump.gpu.to_string(),
            table: table.gpu().to_string(),
        });
    }
    if dump.per_sm.is_empty() {
        return Err(AnalysisError::EmptyDump);
    }

    let no_atomics = dump.total_jobs() == 0;
    let e = if no_atomics {
        None
    } else {
        Some(match (dump.total_atomic_ops, opts.assume_e) {
            (Some(_), _) => derive_e(dump)?,
            (None, Some(assumed)) => {
                if !(assumed.is_finite() && assumed > 0.0) {
                    return Err(AnalysisError::InvalidAssumedE(assumed));
                }
                ActiveThreads::new(assumed, ESource::Assumed)
            }
            (None, None) => return Err(AnalysisError::MissingO),
        })
    };
    let popc = opts.popc_inc && !table.popc_calibrated();

    let per_sm = dump
        .per_sm
        .par_iter()
        .map(|sm| {
            let Some(e) = e else {
                let mut row = derive_sm(sm, 1.0, &dump.gpu, table)?;
                row.avg_active_threads = None;
                return Ok(row);
            };
            let mut row = derive_sm(sm, e.value, &dump.gpu, table)?;
            if row.total_jobs > 0 {
                row.flags.extend(e.flags());
                if popc {
                    row.flags.insert(Flag::PopcAsFao);
                }
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;

    let mut us: Vec<f64> = per_sm.iter().map(|r| r.utilization).collect();
    us.sort_by(f64::total_cmp);
    let med = median(&us);
    let summary = Summary {
        min_utilization: us[0],
        median_utilization: med,
        max_utilization: us[us.len() - 1],
        verdict: if no_atomics {
            Verdict::NoAtomics
        } else {
            Verdict::from_utilization(med)
        },
    };
    let flags = per_sm.iter().flat_map(|r| r.flags.iter().copied()).collect();
    Ok(Analysis {
        kernel_name: dump.kernel_name.clone(),
        gpu: dump.gpu.clone(),
        active_threads: e,
        per_sm,
        summary,
        flags,
    })
}
