//! Utilization reports in text, JSON and CSV.
//!
//! All three formats print numbers with the same shortest round-trip
//! representation, so parsing any of them recovers identical values.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::gpu::GpuSpec;
use crate::opquant::{ActiveThreads, Analysis, DerivedQuantities, Flag, Summary, BOUND_THRESHOLD, SIGNIFICANT_THRESHOLD};

pub const SCHEMA_VERSION: u32 = 1;
const BAR_WIDTH: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSummary {
    pub name: String,
    pub gpu: GpuSpec,
    pub active_threads: Option<ActiveThreads>,
    pub flags: Vec<Flag>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caveat {
    pub flag: Flag,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub kernel: KernelSummary,
    pub per_sm: Vec<DerivedQuantities>,
    pub summary: Summary,
    pub verdict_line: String,
    pub caveats: Vec<Caveat>,
}

impl From<Analysis> for Report {
    fn from(a: Analysis) -> Self {
        let flags: Vec<Flag> = a.flags.iter().copied().collect();
        let caveats = flags
            .iter()
            .map(|&flag| Caveat {
                flag,
                message: flag.caveat().to_string(),
            })
            .collect();
        Report {
            schema_version: SCHEMA_VERSION,
            verdict_line: verdict_line(&a.summary),
            kernel: KernelSummary {
                name: a.kernel_name,
                gpu: a.gpu,
                active_threads: a.active_threads,
                flags,
            },
            per_sm: a.per_sm,
            summary: a.summary,
            caveats,
        }
    }
}

fn verdict_line(s: &Summary) -> String {
    format!(
        "verdict: {} (heuristic: median U = {}; bound at >= {BOUND_THRESHOLD}, significant at >= {SIGNIFICANT_THRESHOLD})",
        s.verdict,
        num(s.median_utilization)
    )
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>, none: &str) -> String {
    x.map_or_else(|| none.to_string(), num)
}

fn flag_list(flags: impl IntoIterator<Item = Flag>, sep: &str) -> String {
    flags.into_iter().map(|f| f.to_string()).collect::<Vec<_>>().join(sep)
}

/// Bar of `U` capped at full width; `>` marks values above 100%.
pub fn bar(u: f64) -> String {
    let filled = ((u.clamp(0.0, 1.0) * BAR_WIDTH as f64).round() as usize).min(BAR_WIDTH);
    let mut s = "#".repeat(filled);
    s.push_str(&".".repeat(BAR_WIDTH - filled));
    s.push(if u > 1.0 { '>' } else { '|' });
    s
}

pub const CSV_COLUMNS: [&str; 10] = [
    "sm",
    "total_jobs",
    "avg_parallelism",
    "avg_active_threads",
    "avg_queued_cas",
    "service_time_cycles",
    "busy_cycles",
    "active_cycles",
    "utilization",
    "flags",
];

fn row_fields(r: &DerivedQuantities, none: &str) -> [String; 9] {
    [
        r.sm_index.to_string(),
        r.total_jobs.to_string(),
        num(r.avg_parallelism),
        opt(r.avg_active_threads, none),
        num(r.avg_queued_cas),
        opt(r.service_time_cycles, none),
        num(r.busy_cycles),
        r.active_cycles.to_string(),
        num(r.utilization),
    ]
}

impl Report {
    /// Whether any SM's utilization exceeds 100%.
    pub fn has_over100(&self) -> bool {
        self.kernel.flags.contains(&Flag::Over100)
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Text => self.to_text(),
            Format::Json => self.to_json(),
            Format::Csv => self.to_csv(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# schema_version={SCHEMA_VERSION}").unwrap();
        writeln!(out, "# {}", self.verdict_line).unwrap();
        for c in &self.caveats {
            writeln!(out, "# caveat {}: {}", c.flag, c.message).unwrap();
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_COLUMNS).unwrap();
        for r in &self.per_sm {
            let mut rec = row_fields(r, "").to_vec();
            rec.push(flag_list(r.flags.iter().copied(), ";"));
            w.write_record(&rec).unwrap();
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8"));
        out
    }

    pub fn to_text(&self) -> String {
        let k = &self.kernel;
        let mut out = String::new();
        writeln!(out, "kernel: {}", k.name).unwrap();
        writeln!(out, "gpu: {}", k.gpu).unwrap();
        match &k.active_threads {
            Some(e) => {
                let source = match e.source {
                    crate::opquant::ESource::Derived => "derived",
                    crate::opquant::ESource::Assumed => "assumed",
                };
                write!(out, "e: {} ({source}", num(e.value)).unwrap();
                if e.clamped {
                    write!(out, ", raw {}", num(e.raw)).unwrap();
                }
                writeln!(out, ")").unwrap();
            }
            None => writeln!(out, "e: -").unwrap(),
        }
        if k.flags.is_empty() {
            writeln!(out, "flags: none").unwrap();
        } else {
            writeln!(out, "flags: {}", flag_list(k.flags.iter().copied(), ", ")).unwrap();
        }
        writeln!(out).unwrap();

        let mut rows: Vec<Vec<String>> = vec![CSV_COLUMNS[..9].iter().map(|s| s.to_string()).collect()];
        rows[0].push("bar".into());
        rows[0].push("flags".into());
        for r in &self.per_sm {
            let mut row = row_fields(r, "-").to_vec();
            row.push(bar(r.utilization));
            row.push(flag_list(r.flags.iter().copied(), ","));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        for row in &rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, &w))| if i >= 9 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
                .collect();
            writeln!(out, "{}", line.join("  ").trim_end()).unwrap();
        }
        writeln!(out).unwrap();

        let s = &self.summary;
        writeln!(
            out,
            "utilization: min {}  median {}  max {}",
            num(s.min_utilization),
            num(s.median_utilization),
            num(s.max_utilization)
        )
        .unwrap();
        writeln!(out, "{}", self.verdict_line).unwrap();
        if !self.caveats.is_empty() {
            writeln!(out, "caveats:").unwrap();
            for c in &self.caveats {
                writeln!(out, "  - [{}] {}", c.flag, c.message).unwrap();
            }
        }
        out
    }
}
