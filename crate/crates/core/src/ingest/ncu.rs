//! NCU-style kernel-wide metric CSV (`Metric Name,Metric Value` rows).
//!
//! NCU reports each metric as `.min`, `.max`, `.sum` and `.avg` across SMs;
//! only the `.sum` of the shared-memory atomic operation counter is used.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_count, strip_banner, IngestError};

/// Stable part of the shared-atomic operation counter name.
pub const NCU_ATOM_SUBSTRING: &str = "mem_shared_op_atom";
const SUM_SUFFIX: &str = ".sum";

/// Kernel-wide totals from an NCU export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NcuAggregate {
    pub kernel_name: String,
    pub total_atomic_ops: u64,
}

pub fn parse_ncu_csv(path: &Path) -> Result<NcuAggregate, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_ncu_str(&text)
}

pub fn parse_ncu_str(text: &str) -> Result<NcuAggregate, IngestError> {
    let body = strip_banner(text);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Csv(e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let name_col = col("Metric Name").ok_or_else(|| IngestError::MissingColumn("Metric Name".into()))?;
    let value_col = col("Metric Value").ok_or_else(|| IngestError::MissingColumn("Metric Value".into()))?;
    let kernel_col = col("Kernel Name");

    let mut found: Option<NcuAggregate> = None;
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Csv(e.to_string()))?;
        let row = record.position().map_or(0, |p| p.line());
        let metric = record.get(name_col).unwrap_or("");
        if !(metric.contains(NCU_ATOM_SUBSTRING) && metric.ends_with(SUM_SUFFIX)) {
            continue;
        }
        let raw = record.get(value_col).unwrap_or("");
        let value = parse_count(raw).ok_or_else(|| IngestError::MalformedNumber {
            row,
            column: "Metric Value".into(),
            value: raw.to_string(),
        })?;
        let kernel = kernel_col
            .and_then(|k| record.get(k))
            .unwrap_or("")
            .to_string();
        match &found {
            None => {
                found = Some(NcuAggregate {
                    kernel_name: kernel,
                    total_atomic_ops: value,
                })
            }
            Some(prev) if prev.kernel_name != kernel => {
                return Err(IngestError::MultipleKernels(prev.kernel_name.clone(), kernel));
            }
            Some(prev) if prev.total_atomic_ops != value => {
                return Err(IngestError::Conflict(format!(
                    "`{metric}` for kernel `{kernel}`: {} vs {value}",
                    prev.total_atomic_ops
                )));
            }
            Some(_) => {}
        }
    }
    found.ok_or_else(|| IngestError::MissingMetric(format!("*{NCU_ATOM_SUBSTRING}{SUM_SUFFIX}")))
}

/// Renders an NCU-style export with all four aggregations of the counter.
pub fn write_ncu_csv(agg: &NcuAggregate, sm_count: u32) -> String {
    let metric = format!("smsp__l1tex_data_pipe_lsu_wavefronts_{NCU_ATOM_SUBSTRING}");
    let per_sm = agg.total_atomic_ops as f64 / f64::from(sm_count.max(1));
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Always)
        .from_writer(Vec::new());
    w.write_record(["Kernel Name", "Metric Name", "Metric Unit", "Metric Value"])
        .unwrap();
    for (suffix, value) in [
        ("avg", per_sm.to_string()),
        ("max", per_sm.ceil().to_string()),
        ("min", per_sm.floor().to_string()),
        ("sum", agg.total_atomic_ops.to_string()),
    ] {
        w.write_record([agg.kernel_name.as_str(), &format!("{metric}.{suffix}"), "", &value])
            .unwrap();
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is utf-8")
}
