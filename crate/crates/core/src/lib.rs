//! Per-SM utilization of the GPU shared-memory atomic unit, modelled as a
//! single server with load-dependent service time.
//!
//! - [`param_table`]: calibrated drain times `T(n, e, c)` and interpolation.
//! - [`ingest`]: profiler counters to a canonical per-SM dump.
//! - [`opquant`]: derived quantities, utilization and flags.
//! - [`report`]: text, JSON and CSV reports.
//! - [`queue_sim`]: discrete-event simulator, synthetic tables and scenarios.
//! - [`sweep`]: one-parameter scenario sweeps.
//!
//! ```
//! use atomql::gpu::GpuSpec;
//! use atomql::queue_sim::{synthesize_table, SyntheticFamily};
//!
//! let t = synthesize_table(&GpuSpec::a6000(), &SyntheticFamily::default()).unwrap();
//! assert_eq!(t.n_max(), 48);
//! ```

pub mod gpu;
pub mod ingest;
pub mod opquant;
pub mod param_table;
pub mod queue_sim;
pub mod report;
pub mod sweep;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tables.md")]
    mod tables {}
    #[doc = include_str!("../../../book/src/counters.md")]
    mod counters {}
    #[doc = include_str!("../../../book/src/derived.md")]
    mod derived {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
