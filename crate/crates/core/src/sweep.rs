//! Parameter sweeps over a scenario template, producing plot data.
//!
//! A sweep is written `param=values`, where `values` is one of
//!
//! * a list: `1,4,16`
//! * a linear range, step 1 unless given: `1..32` or `0..1/0.25`
//! * a geometric range: `1..1000000*10`
//!
//! Range ends are inclusive.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::opquant::{derive_all, AnalysisOptions};
use crate::param_table::ParamTable;
use crate::queue_sim::{generate_dump, Scenario};
use crate::report::num;

/// Upper bound on points in one sweep.
pub const MAX_POINTS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SweepError {
    #[error("`{0}`: expected param=values")]
    Syntax(String),

    #[error("unknown sweep parameter `{0}` (expected jobs_per_sm, active_threads, cas_fraction or occupancy)")]
    UnknownParam(String),

    #[error("`{0}` is not a number")]
    BadNumber(String),

    #[error("range `{0}` is empty")]
    EmptyRange(String),

    #[error("range `{0}` has more than {MAX_POINTS} points")]
    TooManyPoints(String),

    #[error("{param} takes whole numbers, got {value}")]
    NotIntegral { param: SweepParam, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    JobsPerSm,
    ActiveThreads,
    CasFraction,
    Occupancy,
}

impl SweepParam {
    fn integral(self) -> bool {
        matches!(self, SweepParam::JobsPerSm | SweepParam::ActiveThreads)
    }

    /// Copy of `template` with this parameter set to `value`.
    pub fn apply(self, template: &Scenario, value: f64) -> Scenario {
        let mut s = template.clone();
        match self {
            SweepParam::JobsPerSm => s.jobs_per_sm = value as u64,
            SweepParam::ActiveThreads => s.active_threads = value as u32,
            SweepParam::CasFraction => s.cas_fraction = value,
            SweepParam::Occupancy => s.occupancy = value,
        }
        s
    }
}

impl FromStr for SweepParam {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "jobs_per_sm" | "jobs" => Ok(SweepParam::JobsPerSm),
            "active_threads" | "e" => Ok(SweepParam::ActiveThreads),
            "cas_fraction" | "cas" => Ok(SweepParam::CasFraction),
            "occupancy" | "o" => Ok(SweepParam::Occupancy),
            _ => Err(SweepError::UnknownParam(s.to_string())),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::JobsPerSm => "jobs_per_sm",
            SweepParam::ActiveThreads => "active_threads",
            SweepParam::CasFraction => "cas_fraction",
            SweepParam::Occupancy => "occupancy",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

fn number(s: &str) -> Result<f64, SweepError> {
    let s = s.trim();
    s.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| SweepError::BadNumber(s.to_string()))
}

/// Values of a range or list, before any per-parameter checks.
pub fn parse_values(text: &str) -> Result<Vec<f64>, SweepError> {
    let empty = || SweepError::EmptyRange(text.to_string());
    let too_many = || SweepError::TooManyPoints(text.to_string());
    let Some((start, rest)) = text.split_once("..") else {
        let values = text
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(number)
            .collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err(empty());
        }
        return Ok(values);
    };
    let start = number(start)?;

    if let Some((end, factor)) = rest.split_once('*') {
        let (end, factor) = (number(end)?, number(factor)?);
        if start <= 0.0 || factor <= 1.0 || end < start {
            return Err(empty());
        }
        let mut values = Vec::new();
        for k in 0.. {
            let v = start * factor.powi(k);
            if v > end * (1.0 + 1e-12) {
                break;
            }
            if values.len() == MAX_POINTS {
                return Err(too_many());
            }
            values.push(v);
        }
        return Ok(values);
    }

    let (end, step) = match rest.split_once('/') {
        Some((end, step)) => (number(end)?, number(step)?),
        None => (number(rest)?, 1.0),
    };
    if step <= 0.0 || end < start {
        return Err(empty());
    }
    let count = ((end - start) / step * (1.0 + 1e-12)).floor() + 1.0;
    if count > MAX_POINTS as f64 {
        return Err(too_many());
    }
    Ok((0..count as usize).map(|k| start + k as f64 * step).collect())
}

impl FromStr for SweepSpec {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (param, values) = s.split_once('=').ok_or_else(|| SweepError::Syntax(s.to_string()))?;
        let param: SweepParam = param.parse()?;
        let mut values = parse_values(values.trim())?;
        if param.integral() {
            for v in &mut values {
                let r = v.round();
                if r < 0.0 || (r - *v).abs() > 1e-9 * r.max(1.0) {
                    return Err(SweepError::NotIntegral { param, value: *v });
                }
                *v = r;
            }
        }
        Ok(SweepSpec { param, values })
    }
}

/// One swept point. Failed points keep their row with the reason in
/// `status` and empty measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub status: String,
    pub median_utilization: Option<f64>,
    pub e: Option<f64>,
    pub n_hat: Option<f64>,
    pub simulated_utilization: Option<f64>,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

fn point(template: &Scenario, param: SweepParam, value: f64, table: &ParamTable, seed: u64) -> SweepRow {
    let mut row = SweepRow {
        value,
        status: "ok".into(),
        median_utilization: None,
        e: None,
        n_hat: None,
        simulated_utilization: None,
    };
    let scenario = param.apply(template, value);
    let run = match generate_dump(&scenario, table, seed) {
        Ok(run) => run,
        Err(err) => {
            row.status = err.to_string();
            return row;
        }
    };
    let opts = AnalysisOptions {
        allow_gpu_mismatch: true,
        ..Default::default()
    };
    match derive_all(&run.dump, table, &opts) {
        Ok(a) => {
            row.median_utilization = Some(a.summary.median_utilization);
            row.e = a.active_threads.map(|e| e.value);
            let mut n: Vec<f64> = a.per_sm.iter().map(|r| r.avg_parallelism).collect();
            n.sort_by(f64::total_cmp);
            row.n_hat = Some(n[n.len() / 2]);
            row.simulated_utilization = Some(run.simulated_utilization());
        }
        Err(err) => row.status = err.to_string(),
    }
    row
}

/// Evaluates every point concurrently; rows come back in sweep order.
///
/// The template's GPU should already be resolved to a spec; the caller is
/// responsible for checking it against the table.
pub fn run_sweep(template: &Scenario, spec: &SweepSpec, table: &ParamTable, seed: u64) -> Vec<SweepRow> {
    spec.values
        .par_iter()
        .map(|&v| point(template, spec.param, v, table, seed))
        .collect()
}

/// Plot-data CSV, one row per point.
pub fn write_sweep_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = String::new();
    writeln!(out, "{param},status,median_utilization,e,n_hat,simulated_utilization").unwrap();
    let mut w = csv::Writer::from_writer(Vec::new());
    let opt = |x: Option<f64>| x.map_or_else(String::new, num);
    for r in rows {
        w.write_record([
            num(r.value),
            r.status.clone(),
            opt(r.median_utilization),
            opt(r.e),
            opt(r.n_hat),
            opt(r.simulated_utilization),
        ])
        .unwrap();
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8"));
    out
}
