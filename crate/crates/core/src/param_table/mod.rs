//! The calibrated service-time table of one GPU model.
//!
//! A table holds the measured total time `T(n, e, c)` in cycles to drain a
//! closed batch of `n` warp-instructions, each with `e` active threads, `c` of
//! which are compare-and-swap. The grid covers every integral
//! `1 <= n <= warps_per_sm`, `1 <= e <= 32` and `0 <= c <= n`, so the `c`
//! axis is ragged. `T(0, e, c) = 0` is implied and never stored.

mod file;
mod interp;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::gpu::{GpuError, GpuSpec, WARP_SIZE};

pub use file::{load_table, parse_bench_rows, parse_table, save_table, write_table};
pub use interp::{Clamps, Lookup};

/// How many missing cells an error carries before it only counts.
pub const MISSING_CELLS_REPORTED: usize = 20;

/// Warp-instruction classes that reach the shared-memory atomic unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobClass {
    /// Fetch-and-op (add, min, xor, ...).
    Fao,
    /// Compare-and-swap.
    Cas,
    /// Ampere population-count increment. Looked up on the FAO axis unless
    /// the table is POPC-calibrated.
    PopcInc,
}

impl JobClass {
    /// Whether the job counts towards the `c` coordinate.
    pub fn is_cas(self) -> bool {
        matches!(self, JobClass::Cas)
    }
}

/// One integral point of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCell {
    pub n: u32,
    pub e: u32,
    pub c: u32,
}

impl GridCell {
    pub fn new(n: u32, e: u32, c: u32) -> Self {
        GridCell { n, e, c }
    }
}

impl fmt::Display for GridCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(n={}, e={}, c={})", self.n, self.e, self.c)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Gpu(#[from] GpuError),

    #[error("line {line}: {msg}")]
    Malformed { line: u64, msg: String },

    #[error("missing `# {0}=` header")]
    MissingHeader(&'static str),

    #[error("header declares warps_per_sm={declared} but the largest n present is {found}")]
    SpecMismatch { declared: u32, found: u32 },

    #[error("{}", missing_message(.first, *.total))]
    MissingCells { first: Vec<GridCell>, total: usize },

    #[error("cell {0} has a non-positive total time")]
    NonPositiveTime(GridCell),

    #[error("cell {0} appears more than once")]
    DuplicateCell(GridCell),

    #[error("cell {0} is outside the grid (need n >= 1, 1 <= e <= 32, c <= n)")]
    OutOfGrid(GridCell),

    #[error("{axis} = {value} is outside the table domain")]
    OutOfRange { axis: &'static str, value: f64 },

    #[error("service time is undefined at zero load")]
    ZeroLoad,
}

fn missing_message(first: &[GridCell], total: usize) -> String {
    let listed: Vec<String> = first.iter().map(ToString::to_string).collect();
    let mut msg = format!("{total} missing cell(s): {}", listed.join(", "));
    if total > first.len() {
        msg.push_str(&format!(" and {} more", total - first.len()));
    }
    msg
}

/// Dense, immutable `T(n, e, c)` grid for one GPU model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamTable {
    gpu: GpuSpec,
    samples: Vec<u64>,
    metadata: String,
    popc_calibrated: bool,
}

/// Start of the `n` layer in the flattened grid. Layer `k` holds
/// `32 * (k + 1)` cells.
fn layer_offset(n: u32) -> usize {
    let n = n as usize;
    WARP_SIZE as usize * (n - 1) * (n + 2) / 2
}

fn cell_count(n_max: u32) -> usize {
    layer_offset(n_max + 1)
}

impl ParamTable {
    /// Builds a table by evaluating `f` at every grid cell.
    pub fn from_fn(
        gpu: GpuSpec,
        metadata: impl Into<String>,
        mut f: impl FnMut(GridCell) -> u64,
    ) -> Result<Self, TableError> {
        gpu.validate()?;
        let mut samples = Vec::with_capacity(cell_count(gpu.warps_per_sm));
        for cell in grid_cells(gpu.warps_per_sm) {
            let t = f(cell);
            if t == 0 {
                return Err(TableError::NonPositiveTime(cell));
            }
            samples.push(t);
        }
        Ok(ParamTable {
            gpu,
            samples,
            metadata: metadata.into(),
            popc_calibrated: false,
        })
    }

    /// Builds a table from measured rows in any order. Every cell must be
    /// present exactly once.
    pub fn from_rows(
        gpu: GpuSpec,
        metadata: impl Into<String>,
        rows: impl IntoIterator<Item = (GridCell, u64)>,
    ) -> Result<Self, TableError> {
        gpu.validate()?;
        let n_max = gpu.warps_per_sm;
        let mut slots: Vec<Option<u64>> = vec![None; cell_count(n_max)];
        let mut max_n = 0;
        let mut overflow: Option<u32> = None;
        for (cell, t) in rows {
            if cell.n == 0 || cell.e == 0 || cell.e > WARP_SIZE || cell.c > cell.n {
                return Err(TableError::OutOfGrid(cell));
            }
            if cell.n > n_max {
                overflow = Some(overflow.map_or(cell.n, |m| m.max(cell.n)));
                continue;
            }
            max_n = max_n.max(cell.n);
            if t == 0 {
                return Err(TableError::NonPositiveTime(cell));
            }
            let slot = &mut slots[Self::index_of(cell)];
            if slot.is_some() {
                return Err(TableError::DuplicateCell(cell));
            }
            *slot = Some(t);
        }
        if let Some(found) = overflow {
            return Err(TableError::SpecMismatch { declared: n_max, found });
        }
        if max_n != n_max {
            return Err(TableError::SpecMismatch { declared: n_max, found: max_n });
        }

        let mut missing = Vec::new();
        let mut total_missing = 0;
        for (cell, slot) in grid_cells(n_max).zip(&slots) {
            if slot.is_none() {
                total_missing += 1;
                if missing.len() < MISSING_CELLS_REPORTED {
                    missing.push(cell);
                }
            }
        }
        if total_missing > 0 {
            return Err(TableError::MissingCells {
                first: missing,
                total: total_missing,
            });
        }
        Ok(ParamTable {
            gpu,
            samples: slots.into_iter().flatten().collect(),
            metadata: metadata.into(),
            popc_calibrated: false,
        })
    }

    pub fn with_metadata(mut self, metadata: impl Into<String>) -> Self {
        self.metadata = metadata.into();
        self
    }

    pub fn with_popc_calibrated(mut self, popc: bool) -> Self {
        self.popc_calibrated = popc;
        self
    }

    pub fn gpu(&self) -> &GpuSpec {
        &self.gpu
    }

    pub fn n_max(&self) -> u32 {
        self.gpu.warps_per_sm
    }

    pub fn metadata(&self) -> &str {
        &self.metadata
    }

    /// Whether POPC.INC jobs have their own calibration in this table.
    pub fn popc_calibrated(&self) -> bool {
        self.popc_calibrated
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn index_of(cell: GridCell) -> usize {
        layer_offset(cell.n) + (cell.e as usize - 1) * (cell.n as usize + 1) + cell.c as usize
    }

    fn in_grid(&self, cell: GridCell) -> bool {
        (1..=self.n_max()).contains(&cell.n)
            && (1..=WARP_SIZE).contains(&cell.e)
            && cell.c <= cell.n
    }

    /// The stored sample at an integral cell, if the cell is in the grid.
    pub fn sample(&self, cell: GridCell) -> Option<u64> {
        self.in_grid(cell).then(|| self.samples[Self::index_of(cell)])
    }

    /// Cells in `(n, e, c)` lexicographic order paired with their samples.
    pub fn cells(&self) -> impl Iterator<Item = (GridCell, u64)> + '_ {
        grid_cells(self.n_max()).zip(self.samples.iter().copied())
    }
}

/// Every grid cell for `n_max`, lexicographically sorted.
pub fn grid_cells(n_max: u32) -> impl Iterator<Item = GridCell> {
    (1..=n_max).flat_map(|n| (1..=WARP_SIZE).flat_map(move |e| (0..=n).map(move |c| GridCell { n, e, c })))
}
