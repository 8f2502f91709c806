//! Event loop for a single load-dependent server.

use serde::{Deserialize, Serialize};

use super::{ServiceFunction, SimError};
use crate::gpu::WARP_SIZE;
use crate::param_table::JobClass;

/// One warp-instruction presented to the atomic unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub class: JobClass,
    pub active_threads: u32,
    pub arrival: f64,
}

impl Job {
    pub fn new(id: u64, class: JobClass, active_threads: u32, arrival: f64) -> Self {
        Job {
            id,
            class,
            active_threads,
            arrival,
        }
    }
}

/// How the server divides its capacity among jobs in the system.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discipline {
    /// Every job in the system progresses at once. With `n` jobs present the
    /// server completes work at `1 / S(n, e, c)` jobs per cycle, split evenly.
    /// Among jobs of one class and thread count, completions keep arrival
    /// order.
    #[default]
    ProcessorSharing,
    /// Only the head of the queue progresses, at `1 / S(n, e, c)`.
    Fifo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub id: u64,
    pub class: JobClass,
    pub active_threads: u32,
    pub arrival: f64,
    pub service_start: f64,
    pub completion: f64,
}

/// Everything a run observed. `jobs` is in completion order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub jobs: Vec<JobRecord>,
    pub arrivals: usize,
    pub completions: usize,
    /// Last completion minus first arrival.
    pub total_time: f64,
    /// Time with at least one job in the system.
    pub busy_cycles: f64,
}

impl SimTrace {
    fn empty() -> Self {
        SimTrace {
            jobs: Vec::new(),
            arrivals: 0,
            completions: 0,
            total_time: 0.0,
            busy_cycles: 0.0,
        }
    }

    /// Busy fraction of the observation window.
    pub fn utilization(&self) -> f64 {
        if self.total_time > 0.0 {
            self.busy_cycles / self.total_time
        } else {
            0.0
        }
    }

    /// Completions per cycle over the observation window.
    pub fn throughput(&self) -> f64 {
        if self.total_time > 0.0 {
            self.completions as f64 / self.total_time
        } else {
            0.0
        }
    }

    /// One CSV row per job, in completion order.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        if self.jobs.is_empty() {
            w.write_record(["id", "class", "active_threads", "arrival", "service_start", "completion"])
                .unwrap();
        }
        for r in &self.jobs {
            w.serialize(r).expect("job records serialize");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
    }

    /// Shifts every timestamp by `offset` cycles.
    pub(crate) fn shift(&mut self, offset: f64) {
        for r in &mut self.jobs {
            r.arrival += offset;
            r.service_start += offset;
            r.completion += offset;
        }
    }
}

struct InSystem {
    job: Job,
    remaining: f64,
    started: Option<f64>,
}

fn validate(jobs: &[Job]) -> Result<(), SimError> {
    let mut prev = f64::NEG_INFINITY;
    for job in jobs {
        if !(1..=WARP_SIZE).contains(&job.active_threads) {
            return Err(SimError::InvalidJob {
                id: job.id,
                reason: format!("active_threads {} outside 1..=32", job.active_threads),
            });
        }
        if !job.arrival.is_finite() || job.arrival < 0.0 {
            return Err(SimError::InvalidJob {
                id: job.id,
                reason: format!("arrival {} is not a nonnegative cycle count", job.arrival),
            });
        }
        if job.arrival < prev {
            return Err(SimError::InvalidJob {
                id: job.id,
                reason: "jobs must be sorted by arrival".into(),
            });
        }
        prev = job.arrival;
    }
    Ok(())
}

/// Runs `jobs` through one server until the system drains.
///
/// The service rate is re-evaluated whenever the load `n` or the CAS count
/// `c` changes; each job keeps the fraction of its work already done, so its
/// remaining time scales by `old_rate / new_rate`. Under processor sharing a
/// closed batch of `n` identical jobs drains in exactly `n * S(n, e, c)`.
pub fn simulate(
    jobs: &[Job],
    service: &dyn ServiceFunction,
    discipline: Discipline,
) -> Result<SimTrace, SimError> {
    validate(jobs)?;
    if jobs.is_empty() {
        return Ok(SimTrace::empty());
    }

    let first_arrival = jobs[0].arrival;
    let mut now = first_arrival;
    let mut next = 0;
    let mut system: Vec<InSystem> = Vec::new();
    let mut records = Vec::with_capacity(jobs.len());
    let mut busy = 0.0;
    let mut cas_in_system = 0usize;
    // Per-job service time at the current (n, c), refreshed on every event.
    let mut service_times: Vec<f64> = Vec::new();

    loop {
        while next < jobs.len() && jobs[next].arrival <= now {
            let job = jobs[next];
            if job.class.is_cas() {
                cas_in_system += 1;
            }
            system.push(InSystem {
                job,
                remaining: 1.0,
                started: None,
            });
            next += 1;
        }

        if system.is_empty() {
            if next == jobs.len() {
                break;
            }
            now = jobs[next].arrival;
            continue;
        }

        let n = system.len() as f64;
        let c = cas_in_system as f64;
        let serving = match discipline {
            Discipline::ProcessorSharing => system.len(),
            Discipline::Fifo => 1,
        };
        // Cycles the server spends per unit of a job's work when sharing
        // with everyone else in service.
        let share = match discipline {
            Discipline::ProcessorSharing => n,
            Discipline::Fifo => 1.0,
        };
        service_times.clear();
        for s in &mut system[..serving] {
            s.started.get_or_insert(now);
            let st = service.service_time(n, f64::from(s.job.active_threads), c);
            debug_assert!(st > 0.0 && st.is_finite(), "service time {st}");
            service_times.push(st);
        }

        let mut dt_done = f64::INFINITY;
        for (s, st) in system.iter().zip(&service_times) {
            dt_done = dt_done.min(s.remaining * share * st);
        }
        let dt_arrival = if next < jobs.len() {
            jobs[next].arrival - now
        } else {
            f64::INFINITY
        };

        if dt_arrival < dt_done {
            for (s, st) in system.iter_mut().zip(&service_times) {
                s.remaining -= dt_arrival / (share * st);
            }
            busy += dt_arrival;
            now = jobs[next].arrival;
            continue;
        }

        let finish_at = now + dt_done;
        let cutoff = dt_done * (1.0 + 1e-12);
        let mut kept = Vec::with_capacity(system.len());
        for (i, s) in system.drain(..).enumerate() {
            let in_service = i < serving;
            if in_service && s.remaining * share * service_times[i] <= cutoff {
                if s.job.class.is_cas() {
                    cas_in_system -= 1;
                }
                records.push(JobRecord {
                    id: s.job.id,
                    class: s.job.class,
                    active_threads: s.job.active_threads,
                    arrival: s.job.arrival,
                    service_start: s.started.unwrap_or(now),
                    completion: finish_at,
                });
            } else {
                let mut s = s;
                if in_service {
                    s.remaining -= dt_done / (share * service_times[i]);
                }
                kept.push(s);
            }
        }
        system = kept;
        busy += dt_done;
        now = finish_at;
    }

    let last = records.last().map_or(first_arrival, |r| r.completion);
    Ok(SimTrace {
        arrivals: jobs.len(),
        completions: records.len(),
        total_time: last - first_arrival,
        busy_cycles: busy,
        jobs: records,
    })
}

/// `size` jobs with `active_threads` threads, all arriving at `at`; the
/// first `cas` of them are compare-and-swap.
pub fn closed_batch(size: u32, cas: u32, active_threads: u32, at: f64, first_id: u64) -> Vec<Job> {
    (0..size)
        .map(|i| {
            let class = if i < cas { JobClass::Cas } else { JobClass::Fao };
            Job::new(first_id + u64::from(i), class, active_threads, at)
        })
        .collect()
}
