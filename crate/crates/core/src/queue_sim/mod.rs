//! Discrete-event simulation of the load-dependent single-server queue.
//!
//! The simulator is the independent side of every operational-law check in
//! the crate: it measures `T`, `C` and `B` by running jobs rather than by
//! evaluating formulas. It also synthesizes calibration tables and counter
//! dumps with known ground truth.

mod engine;
mod scenario;
mod synth;

use crate::param_table::{ParamTable, TableError};

pub use engine::{closed_batch, simulate, Discipline, Job, JobRecord, SimTrace};
pub use scenario::{
    generate_dump, poisson_jobs, simulate_closed_batches, ArrivalModel, BatchShape, DurationModel, GeneratedRun,
    GpuRef, Scenario, simulate_scenario,
};
pub use synth::{synthesize_table, SyntheticFamily};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("job {id}: {reason}")]
    InvalidJob { id: u64, reason: String },

    #[error("invalid synthetic family: {0}")]
    InvalidFamily(String),

    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),

    #[error(transparent)]
    Table(#[from] TableError),
}

/// Per-job service time `S(n, e, c)` as seen by the simulator.
pub trait ServiceFunction: Sync {
    /// Cycles per job at load `n >= 1` with `e` active threads and `c` CAS
    /// jobs in the system. Must be finite and positive.
    fn service_time(&self, n: f64, e: f64, c: f64) -> f64;
}

/// Load-independent service.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantService(pub f64);

impl ServiceFunction for ConstantService {
    fn service_time(&self, _n: f64, _e: f64, _c: f64) -> f64 {
        self.0
    }
}

impl ServiceFunction for ParamTable {
    fn service_time(&self, n: f64, e: f64, c: f64) -> f64 {
        ParamTable::service_time(self, n, e, c)
            .expect("simulator queries have n >= 1 and finite coordinates")
            .cycles
    }
}
