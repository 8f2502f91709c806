//! Canonical JSON counter dump.
//!
//! ```json
//! {
//!   "kernel_name": "histogram",
//!   "gpu": { "name": "titan-v", "warps_per_sm": 64, "sm_count": 80 },
//!   "total_atomic_ops": 320,
//!   "per_sm": [
//!     { "sm": 0, "fao": 10, "cas": 0, "active_cycles": 1000, "achieved_occupancy": 0.25 }
//!   ]
//! }
//! ```

use std::fs;
use std::path::Path;

use super::{CounterDump, IngestError};

pub fn parse_canonical(path: &Path) -> Result<CounterDump, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_canonical_str(&text)
}

pub fn parse_canonical_str(text: &str) -> Result<CounterDump, IngestError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let mut dump: CounterDump = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        IngestError::Schema {
            path,
            msg: e.into_inner().to_string(),
        }
    })?;
    de.end().map_err(|e| IngestError::Schema {
        path: ".".into(),
        msg: e.to_string(),
    })?;
    dump.validate()?;
    dump.sort_by_sm();
    Ok(dump)
}

pub fn to_canonical_json(dump: &CounterDump) -> String {
    let mut s = serde_json::to_string_pretty(dump).expect("dump fields always serialize");
    s.push('\n');
    s
}

pub fn write_canonical(dump: &CounterDump, path: &Path) -> Result<(), IngestError> {
    fs::write(path, to_canonical_json(dump)).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}
