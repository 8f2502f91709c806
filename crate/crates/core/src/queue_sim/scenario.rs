//! Workload scenarios and synthetic counter dumps with known ground truth.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::engine::{closed_batch, simulate, Discipline, Job, SimTrace};
use super::{ServiceFunction, SimError};
use crate::gpu::{GpuError, GpuSpec, WARP_SIZE};
use crate::ingest::{CounterDump, SmCounters};
use crate::param_table::JobClass;

/// A GPU given either by preset name or spelled out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GpuRef {
    Preset(String),
    Spec(GpuSpec),
}

impl GpuRef {
    pub fn resolve(&self, user_presets: &[GpuSpec]) -> Result<GpuSpec, GpuError> {
        match self {
            GpuRef::Preset(name) => GpuSpec::resolve(name, user_presets),
            GpuRef::Spec(spec) => {
                spec.validate()?;
                Ok(spec.clone())
            }
        }
    }
}

/// How long the kernel runs on each SM, relative to the atomic unit's work.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DurationModel {
    /// Fixed kernel time.
    Cycles { cycles: u64 },
    /// Kernel time is the simulated busy time divided by `utilization`.
    DutyCycle { utilization: f64 },
    /// Launch overhead plus whichever is slower: the atomic unit or the
    /// rest of the SM issuing `issue_cycles_per_job` per atomic.
    Kernel {
        launch_overhead_cycles: f64,
        issue_cycles_per_job: f64,
    },
}

/// How jobs reach the atomic unit on each SM.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalModel {
    /// Back-to-back closed batches of `occupancy * warps_per_sm` jobs.
    #[default]
    ClosedBatches,
    /// Open Poisson arrivals, `rate` jobs per cycle.
    Poisson { rate: f64 },
}

fn default_kernel_name() -> String {
    "synthetic".into()
}

/// Workload description for [`generate_dump`]. Every SM runs the same
/// workload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_kernel_name")]
    pub kernel_name: String,
    pub gpu: GpuRef,
    /// SMs to emit; defaults to every SM of the GPU.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sm_count: Option<u32>,
    pub jobs_per_sm: u64,
    pub active_threads: u32,
    #[serde(default)]
    pub cas_fraction: f64,
    pub occupancy: f64,
    pub duration: DurationModel,
    #[serde(default)]
    pub arrivals: ArrivalModel,
}

/// `count` identical closed batches of `size` jobs, `cas` of them CAS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchShape {
    pub size: u32,
    pub cas: u32,
    pub count: u64,
}

/// A synthetic kernel launch and the simulator's ground truth for it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedRun {
    pub dump: CounterDump,
    /// Simulated busy time of the atomic unit on each SM.
    pub busy_cycles: f64,
    /// First arrival to last completion on each SM.
    pub trace_span: f64,
    /// Kernel time written to `active_cycles`.
    pub kernel_cycles: u64,
}

impl GeneratedRun {
    /// Utilization measured by the simulator, `B / T`.
    pub fn simulated_utilization(&self) -> f64 {
        self.busy_cycles / self.kernel_cycles as f64
    }
}

struct Plan {
    gpu: GpuSpec,
    sm_count: u32,
    cas_jobs: u64,
    batch: u32,
}

fn infeasible(msg: impl Into<String>) -> SimError {
    SimError::InfeasibleScenario(msg.into())
}

impl Scenario {
    fn plan(&self) -> Result<Plan, SimError> {
        let gpu = self.gpu.resolve(&[]).map_err(|e| infeasible(e.to_string()))?;
        let sm_count = self.sm_count.unwrap_or(gpu.sm_count);
        if sm_count == 0 || sm_count > gpu.sm_count {
            return Err(infeasible(format!("sm_count {sm_count} not in 1..={}", gpu.sm_count)));
        }
        if !(1..=WARP_SIZE).contains(&self.active_threads) {
            return Err(infeasible(format!("active_threads {} not in 1..=32", self.active_threads)));
        }
        if !(self.cas_fraction.is_finite() && (0.0..=1.0).contains(&self.cas_fraction)) {
            return Err(infeasible(format!("cas_fraction {} not in [0, 1]", self.cas_fraction)));
        }
        if !(self.occupancy.is_finite() && (0.0..=1.0).contains(&self.occupancy)) {
            return Err(infeasible(format!("occupancy {} not in [0, 1]", self.occupancy)));
        }
        let cas_jobs = (self.jobs_per_sm as f64 * self.cas_fraction).round() as u64;

        let mut batch = 0;
        if self.jobs_per_sm > 0 {
            match self.arrivals {
                ArrivalModel::ClosedBatches => {
                    let p = self.occupancy * f64::from(gpu.warps_per_sm);
                    let rounded = p.round();
                    if rounded < 1.0 || (p - rounded).abs() > 1e-9 * rounded {
                        return Err(infeasible(format!(
                            "closed batches need occupancy * warps_per_sm to be a positive integer, got {p}"
                        )));
                    }
                    batch = rounded as u32;
                }
                ArrivalModel::Poisson { rate } => {
                    if !(rate.is_finite() && rate > 0.0) {
                        return Err(infeasible(format!("poisson rate {rate} must be positive")));
                    }
                    if self.occupancy == 0.0 {
                        return Err(infeasible("occupancy must be positive when jobs run"));
                    }
                }
            }
        }
        Ok(Plan {
            gpu,
            sm_count,
            cas_jobs,
            batch,
        })
    }

    /// Splits the SM's jobs into closed batches with CAS jobs spread as
    /// evenly as possible, so every full batch has `floor` or `ceil` of the
    /// average CAS count.
    fn batches(&self, plan: &Plan) -> Vec<BatchShape> {
        let n = self.jobs_per_sm;
        if n == 0 {
            return Vec::new();
        }
        let p = u64::from(plan.batch);
        let full = n / p;
        let rest = n % p;
        let rest_cas = if full == 0 {
            plan.cas_jobs
        } else {
            ((rest as f64) * plan.cas_jobs as f64 / n as f64).round() as u64
        };
        let full_cas = plan.cas_jobs - rest_cas;

        let mut shapes = Vec::new();
        if full > 0 {
            let per = full_cas / full;
            let extra = full_cas % full;
            if full - extra > 0 {
                shapes.push(BatchShape {
                    size: plan.batch,
                    cas: per as u32,
                    count: full - extra,
                });
            }
            if extra > 0 {
                shapes.push(BatchShape {
                    size: plan.batch,
                    cas: per as u32 + 1,
                    count: extra,
                });
            }
        }
        if rest > 0 {
            shapes.push(BatchShape {
                size: rest as u32,
                cas: rest_cas as u32,
                count: 1,
            });
        }
        shapes
    }
}

/// Poisson arrivals of `count` jobs at `rate` per cycle; exactly `cas` of
/// them, chosen at random, are CAS.
pub fn poisson_jobs(count: usize, rate: f64, active_threads: u32, cas: usize, seed: u64) -> Vec<Job> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = Exp::new(rate).expect("rate is positive");
    let mut classes = vec![JobClass::Fao; count];
    for i in index::sample(&mut rng, count, cas.min(count)) {
        classes[i] = JobClass::Cas;
    }
    let mut t = 0.0;
    classes
        .into_iter()
        .enumerate()
        .map(|(i, class)| {
            t += gap.sample(&mut rng);
            Job::new(i as u64, class, active_threads, t)
        })
        .collect()
}

/// Runs closed batches back to back: each batch arrives the moment the
/// previous one drains.
pub fn simulate_closed_batches(
    shapes: &[BatchShape],
    active_threads: u32,
    service: &dyn ServiceFunction,
) -> Result<SimTrace, SimError> {
    let mut out = SimTrace {
        jobs: Vec::new(),
        arrivals: 0,
        completions: 0,
        total_time: 0.0,
        busy_cycles: 0.0,
    };
    let mut now = 0.0;
    let mut next_id = 0;
    for shape in shapes {
        for _ in 0..shape.count {
            let jobs = closed_batch(shape.size, shape.cas, active_threads, 0.0, next_id);
            next_id += u64::from(shape.size);
            let mut t = simulate(&jobs, service, Discipline::ProcessorSharing)?;
            t.shift(now);
            now += t.total_time;
            out.arrivals += t.arrivals;
            out.completions += t.completions;
            out.busy_cycles += t.busy_cycles;
            out.jobs.extend(t.jobs);
        }
    }
    out.total_time = now;
    Ok(out)
}

/// Busy time of back-to-back closed batches without expanding every batch:
/// identical batches take identical time, so each shape runs once.
fn closed_batch_busy(shapes: &[BatchShape], active_threads: u32, service: &dyn ServiceFunction) -> Result<f64, SimError> {
    let mut busy = 0.0;
    for shape in shapes {
        let jobs = closed_batch(shape.size, shape.cas, active_threads, 0.0, 0);
        let t = simulate(&jobs, service, Discipline::ProcessorSharing)?;
        busy += shape.count as f64 * t.busy_cycles;
    }
    Ok(busy)
}

/// Full trace of one SM's workload.
pub fn simulate_scenario(scenario: &Scenario, service: &dyn ServiceFunction, seed: u64) -> Result<SimTrace, SimError> {
    let plan = scenario.plan()?;
    match scenario.arrivals {
        ArrivalModel::ClosedBatches => {
            simulate_closed_batches(&scenario.batches(&plan), scenario.active_threads, service)
        }
        ArrivalModel::Poisson { rate } => {
            let jobs = poisson_jobs(
                scenario.jobs_per_sm as usize,
                rate,
                scenario.active_threads,
                plan.cas_jobs as usize,
                seed,
            );
            simulate(&jobs, service, Discipline::ProcessorSharing)
        }
    }
}

/// Simulates the scenario on one SM and emits the counters a profiler
/// would have reported for the whole launch.
pub fn generate_dump(scenario: &Scenario, service: &dyn ServiceFunction, seed: u64) -> Result<GeneratedRun, SimError> {
    let plan = scenario.plan()?;
    let n = scenario.jobs_per_sm;

    let (busy, span) = match scenario.arrivals {
        ArrivalModel::ClosedBatches => {
            let busy = closed_batch_busy(&scenario.batches(&plan), scenario.active_threads, service)?;
            (busy, busy)
        }
        ArrivalModel::Poisson { .. } => {
            let t = simulate_scenario(scenario, service, seed)?;
            (t.busy_cycles, t.total_time)
        }
    };

    let raw = match scenario.duration {
        DurationModel::Cycles { cycles } => {
            if (cycles as f64) < span {
                return Err(infeasible(format!(
                    "duration {cycles} cycles is shorter than the simulated {span} cycles"
                )));
            }
            cycles as f64
        }
        DurationModel::DutyCycle { utilization } => {
            if !(utilization > 0.0 && utilization <= 1.0) {
                return Err(infeasible(format!("duty cycle {utilization} not in (0, 1]")));
            }
            let t = busy / utilization;
            if t < span {
                return Err(infeasible(format!(
                    "duty cycle {utilization} needs {t} cycles but the arrivals span {span}"
                )));
            }
            t
        }
        DurationModel::Kernel {
            launch_overhead_cycles,
            issue_cycles_per_job,
        } => {
            let ok = |v: f64| v.is_finite() && v >= 0.0;
            if !ok(launch_overhead_cycles) || !ok(issue_cycles_per_job) {
                return Err(infeasible("kernel duration parameters must be nonnegative"));
            }
            launch_overhead_cycles + span.max(n as f64 * issue_cycles_per_job)
        }
    };
    let kernel_cycles = raw.ceil().max(1.0);
    if kernel_cycles >= u64::MAX as f64 {
        return Err(infeasible("kernel duration overflows a cycle counter"));
    }
    let kernel_cycles = kernel_cycles as u64;

    let total_ops = n
        .checked_mul(u64::from(scenario.active_threads))
        .and_then(|v| v.checked_mul(u64::from(plan.sm_count)))
        .ok_or_else(|| infeasible("total atomic operations overflow"))?;

    let per_sm = (0..plan.sm_count)
        .map(|sm| SmCounters {
            sm_index: sm,
            fao_warp_instructions: n - plan.cas_jobs,
            cas_warp_instructions: plan.cas_jobs,
            active_cycles: kernel_cycles,
            achieved_occupancy: scenario.occupancy,
        })
        .collect();
    let dump = CounterDump {
        kernel_name: scenario.kernel_name.clone(),
        gpu: plan.gpu,
        total_atomic_ops: Some(total_ops),
        per_sm,
    };
    dump.validate().map_err(|e| infeasible(e.to_string()))?;
    Ok(GeneratedRun {
        dump,
        busy_cycles: busy,
        trace_span: span,
        kernel_cycles,
    })
}
