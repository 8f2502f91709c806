//! NVProf-style per-SM metric CSV.
//!
//! Two layouts are accepted:
//!
//! * long: one row per (SM, metric) with `Metric Name` and `Metric Value`
//!   (or `Value`, `Avg`) columns;
//! * wide: one row per SM with a column per metric.
//!
//! Both need an SM column. Metric names are matched by suffix so that
//! device-prefixed names such as `Device 0 shared_atom` still resolve.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{parse_count, strip_banner, CounterDump, IngestError, SmCounters};
use crate::gpu::GpuSpec;

/// Metrics consumed from the per-SM export, in [`SmCounters`] field order.
pub const NVPROF_METRICS: [&str; 4] = ["shared_atom", "shared_atom_cas", "active_cycles", "achieved_occupancy"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NvprofLayout {
    Long,
    Wide,
}

fn metric_of(name: &str) -> Option<usize> {
    let name = name.trim();
    // Longest names first so `shared_atom_cas` is not mistaken for a
    // prefixed `shared_atom`.
    [1usize, 3, 2, 0]
        .into_iter()
        .find(|&i| name.ends_with(NVPROF_METRICS[i]))
}

fn find_column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers
        .iter()
        .position(|h| names.iter().any(|n| h.trim().eq_ignore_ascii_case(n)))
}

const SM_COLUMNS: [&str; 6] = ["sm", "sm id", "sm_id", "smid", "sm index", "sm_index"];
const KERNEL_COLUMNS: [&str; 2] = ["kernel", "kernel name"];

pub fn parse_nvprof_csv(path: &Path, gpu: &GpuSpec) -> Result<CounterDump, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_nvprof_str(&text, gpu)
}

/// Parses per-SM counters. The result has no kernel-wide operation count.
pub fn parse_nvprof_str(text: &str, gpu: &GpuSpec) -> Result<CounterDump, IngestError> {
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

    let sm_col = find_column(&headers, &SM_COLUMNS).ok_or_else(|| IngestError::MissingColumn("SM".into()))?;
    let kernel_col = find_column(&headers, &KERNEL_COLUMNS);
    let long = find_column(&headers, &["metric name"])
        .zip(find_column(&headers, &["metric value", "value", "avg"]));
    let wide_cols: Vec<(usize, usize)> = if long.is_none() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != sm_col && Some(*i) != kernel_col)
            .filter_map(|(i, h)| metric_of(h).map(|m| (i, m)))
            .collect()
    } else {
        Vec::new()
    };

    // sm -> metric slot -> value
    let mut values: BTreeMap<u32, [Option<Num>; 4]> = BTreeMap::new();
    let mut seen_metric = [false; 4];
    let mut kernel: Option<String> = None;

    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Csv(e.to_string()))?;
        let row = record.position().map_or(0, |p| p.line());
        let cell = |i: usize| record.get(i).unwrap_or("");
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }

        if let Some(k) = kernel_col {
            let name = cell(k).to_string();
            match &kernel {
                Some(prev) if *prev != name => return Err(IngestError::MultipleKernels(prev.clone(), name)),
                Some(_) => {}
                None => kernel = Some(name),
            }
        }

        let sm_raw = cell(sm_col);
        let sm = parse_count(sm_raw)
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| IngestError::MalformedNumber {
                row,
                column: headers[sm_col].to_string(),
                value: sm_raw.to_string(),
            })?;
        let slots = values.entry(sm).or_insert([None; 4]);

        let mut put = |metric: usize, column: &str, raw: &str| -> Result<(), IngestError> {
            let v = parse_value(metric, raw).ok_or_else(|| IngestError::MalformedNumber {
                row,
                column: column.to_string(),
                value: raw.to_string(),
            })?;
            seen_metric[metric] = true;
            match slots[metric] {
                Some(prev) if prev != v => Err(IngestError::Conflict(format!(
                    "`{}` on SM {sm}: {prev:?} vs {v:?}",
                    NVPROF_METRICS[metric]
                ))),
                _ => {
                    slots[metric] = Some(v);
                    Ok(())
                }
            }
        };

        if let Some((name_col, value_col)) = long {
            if let Some(metric) = metric_of(cell(name_col)) {
                put(metric, &headers[value_col], cell(value_col))?;
            }
        } else {
            for &(col, metric) in &wide_cols {
                put(metric, &headers[col], cell(col))?;
            }
        }
    }

    if let Some(missing) = (0..4).find(|&m| !seen_metric[m]) {
        return Err(IngestError::MissingMetric(NVPROF_METRICS[missing].into()));
    }

    let mut per_sm = Vec::with_capacity(values.len());
    for (sm, slots) in values {
        let get = |m: usize| {
            slots[m].ok_or_else(|| IngestError::MissingValue {
                sm,
                metric: NVPROF_METRICS[m].into(),
            })
        };
        per_sm.push(SmCounters {
            sm_index: sm,
            fao_warp_instructions: get(0)?.count(),
            cas_warp_instructions: get(1)?.count(),
            active_cycles: get(2)?.count(),
            achieved_occupancy: get(3)?.real(),
        });
    }

    let dump = CounterDump {
        kernel_name: kernel.unwrap_or_default(),
        gpu: gpu.clone(),
        total_atomic_ops: None,
        per_sm,
    };
    dump.validate()?;
    Ok(dump)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Num {
    Count(u64),
    Real(f64),
}

impl Num {
    fn count(self) -> u64 {
        match self {
            Num::Count(v) => v,
            Num::Real(_) => unreachable!("count metrics parse as Count"),
        }
    }

    fn real(self) -> f64 {
        match self {
            Num::Real(v) => v,
            Num::Count(v) => v as f64,
        }
    }
}

/// Counts must be whole and fit in a u64; occupancy is any finite real
/// (its range is checked by the dump invariants).
fn parse_value(metric: usize, raw: &str) -> Option<Num> {
    if metric == 3 {
        let v: f64 = raw.trim().parse().ok()?;
        v.is_finite().then_some(Num::Real(v))
    } else {
        parse_count(raw).map(Num::Count)
    }
}

/// Renders per-SM counters in either accepted layout.
pub fn write_nvprof_csv(dump: &CounterDump, layout: NvprofLayout) -> String {
    let mut w = csv::WriterBuilder::new()
        .quote_style(csv::QuoteStyle::Always)
        .from_writer(Vec::new());
    let rows = dump.per_sm.iter();
    match layout {
        NvprofLayout::Long => {
            w.write_record(["Kernel", "SM", "Metric Name", "Metric Value"]).unwrap();
            for sm in rows {
                let vals = [
                    sm.fao_warp_instructions.to_string(),
                    sm.cas_warp_instructions.to_string(),
                    sm.active_cycles.to_string(),
                    sm.achieved_occupancy.to_string(),
                ];
                for (name, v) in NVPROF_METRICS.iter().zip(vals) {
                    w.write_record([dump.kernel_name.as_str(), &sm.sm_index.to_string(), name, &v])
                        .unwrap();
                }
            }
        }
        NvprofLayout::Wide => {
            let mut header = vec!["Kernel", "SM"];
            header.extend(NVPROF_METRICS);
            w.write_record(&header).unwrap();
            for sm in rows {
                w.write_record([
                    dump.kernel_name.clone(),
                    sm.sm_index.to_string(),
                    sm.fao_warp_instructions.to_string(),
                    sm.cas_warp_instructions.to_string(),
                    sm.active_cycles.to_string(),
                    sm.achieved_occupancy.to_string(),
                ])
                .unwrap();
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is utf-8")
}
