//! Acceptance runner: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::cell::Cell;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use atomql::gpu::GpuSpec;
use atomql::ingest::{
    merge, parse_canonical_str, parse_ncu_str, parse_nvprof_str, to_canonical_json, write_ncu_csv, write_nvprof_csv,
    CounterDump, NcuAggregate, NvprofLayout, SmCounters,
};
use atomql::opquant::{derive_all, derive_e, AnalysisOptions};
use atomql::param_table::{GridCell, ParamTable};
use atomql::queue_sim::{
    closed_batch, generate_dump, poisson_jobs, simulate, simulate_closed_batches, synthesize_table, ArrivalModel,
    BatchShape, ConstantService, Discipline, DurationModel, GpuRef, Scenario, SyntheticFamily,
};
use atomql::sweep::{run_sweep, SweepSpec};
use common::{arb_dump, arb_mutation, check_dump, default_family_service, mutate, rel_err, CornerOracle};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn volta() -> ParamTable {
    synthesize_table(&GpuSpec::titan_v(), &SyntheticFamily::default()).unwrap()
}

fn interpolation_exactness() -> Outcome {
    let t = volta();
    let oracle = CornerOracle::new(&t);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let n = rng.random_range(1..=64u32);
        let e = rng.random_range(1..=32u32);
        let c = rng.random_range(0..=n);
        let got = t.total_time(n as f64, e as f64, c as f64).map_err(|e| e.to_string())?.cycles;
        let want = t.sample(GridCell::new(n, e, c)).unwrap() as f64;
        ensure(got == want, || format!("T({n},{e},{c}) = {got}, stored {want}"))?;
    }
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < 1000 {
        let n: f64 = rng.random_range(0.0..64.0);
        let e: f64 = rng.random_range(1.0..32.0);
        let c: f64 = rng.random_range(0.0..=n);
        if n.fract() == 0.0 || e.fract() == 0.0 || c.fract() == 0.0 {
            continue;
        }
        let got = t.total_time(n, e, c).map_err(|e| e.to_string())?.cycles;
        let err = rel_err(got, oracle.total_time(n, e, c));
        worst = worst.max(err);
        ensure(err <= 1e-12, || format!("T({n},{e},{c}) off by {err:e}"))?;
        checked += 1;
    }
    Ok(format!(
        "1000 grid points exact; 1000 off-grid points within {worst:.1e} of the 8-corner oracle"
    ))
}

fn service_time_identity() -> Outcome {
    let t = volta();
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut check = |n: f64, e: f64, c: f64| -> Result<(), String> {
        let s = t.service_time(n, e, c).map_err(|e| e.to_string())?.cycles;
        let total = t.total_time(n, e, c).map_err(|e| e.to_string())?.cycles;
        let err = rel_err(s * n, total);
        worst = worst.max(err);
        count += 1;
        ensure(err <= 1e-12, || format!("S*n vs T at ({n},{e},{c}): {err:e}"))
    };
    for (cell, _) in volta().cells() {
        check(cell.n as f64, cell.e as f64, cell.c as f64)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20_000 {
        let n: f64 = rng.random_range(0.001..=64.0);
        let e: f64 = rng.random_range(1.0..=32.0);
        let c: f64 = rng.random_range(0.0..=n);
        check(n, e, c)?;
    }
    Ok(format!("{count} points, max relative error {worst:.1e}"))
}

fn closed_batch_loop() -> Outcome {
    let t = volta();
    let mut worst: f64 = 0.0;
    let mut runs = 0;
    for n in 1..=t.n_max() {
        for e in [1, 8, 16, 32] {
            for c in [0, n / 2, n] {
                let trace =
                    simulate(&closed_batch(n, c, e, 0.0, 0), &t, Discipline::ProcessorSharing).map_err(|e| e.to_string())?;
                let s = t.service_time(n as f64, e as f64, c as f64).unwrap().cycles;
                let err = rel_err(trace.total_time / n as f64, s);
                worst = worst.max(err);
                runs += 1;
                ensure(err <= 1e-9, || format!("n={n} e={e} c={c}: {err:e}"))?;
            }
        }
    }
    Ok(format!("{runs} closed batches, max relative error {worst:.1e}"))
}

fn sm(i: u32, fao: u64, cas: u64, cycles: u64, occ: f64) -> SmCounters {
    SmCounters {
        sm_index: i,
        fao_warp_instructions: fao,
        cas_warp_instructions: cas,
        active_cycles: cycles,
        achieved_occupancy: occ,
    }
}

fn derivations() -> Outcome {
    let t = volta();
    let gpu = GpuSpec::titan_v();
    let dump = |o: u64| CounterDump {
        kernel_name: "hand".into(),
        gpu: gpu.clone(),
        total_atomic_ops: Some(o),
        per_sm: vec![sm(0, 6, 0, 1000, 0.25), sm(1, 2, 2, 500, 0.25), sm(2, 0, 0, 700, 0.5)],
    };
    // Solid: O = 320 over 10 jobs. Random: O = 30 over the same 10 jobs.
    for (o, e_want) in [(320, 32u32), (30, 3u32)] {
        let d = dump(o);
        let e = derive_e(&d).map_err(|e| e.to_string())?;
        ensure(e.value == e_want as f64, || format!("e = {} for O = {o}", e.value))?;
        let a = derive_all(&d, &t, &AnalysisOptions::default()).map_err(|e| e.to_string())?;

        let r0 = &a.per_sm[0];
        ensure(r0.total_jobs == 6 && r0.avg_parallelism == 16.0 && r0.avg_queued_cas == 0.0, || {
            format!("SM 0 basics: {r0:?}")
        })?;
        let s0 = default_family_service(16, e_want, 0);
        ensure(r0.service_time_cycles == Some(s0), || format!("SM 0 S = {:?}, want {s0}", r0.service_time_cycles))?;
        ensure(r0.busy_cycles == 6.0 * s0 && r0.utilization == 6.0 * s0 / 1000.0, || format!("SM 0 B/U: {r0:?}"))?;

        // Half of SM 1's jobs are CAS, so c = 16 * 2 / 4 = 8.
        let r1 = &a.per_sm[1];
        ensure(r1.total_jobs == 4 && r1.avg_queued_cas == 8.0, || format!("SM 1 basics: {r1:?}"))?;
        let s1 = default_family_service(16, e_want, 8);
        ensure(r1.service_time_cycles == Some(s1), || format!("SM 1 S = {:?}, want {s1}", r1.service_time_cycles))?;
        ensure(r1.utilization == 4.0 * s1 / 500.0, || format!("SM 1 U = {}", r1.utilization))?;

        let r2 = &a.per_sm[2];
        ensure(r2.avg_parallelism == 32.0 && r2.utilization == 0.0 && r2.busy_cycles == 0.0, || {
            format!("idle SM 2: {r2:?}")
        })?;
    }
    Ok("N, n-hat, e, c, S, B and U exact for e = 32 and e = 3 dumps".into())
}

fn utilization_recovery() -> Outcome {
    let t = volta();
    let mut details = Vec::new();
    for target in [0.1, 0.5, 0.9, 1.0] {
        let mut worst: f64 = 0.0;
        for (e, cas, occ, jobs) in [(32, 0.0, 0.25, 4096), (3, 0.25, 0.5, 10_000), (12, 1.0, 1.0, 6400)] {
            let s = Scenario {
                kernel_name: "target".into(),
                gpu: GpuRef::Preset("titan-v".into()),
                sm_count: None,
                jobs_per_sm: jobs,
                active_threads: e,
                cas_fraction: cas,
                occupancy: occ,
                duration: DurationModel::DutyCycle { utilization: target },
                arrivals: ArrivalModel::ClosedBatches,
            };
            let run = generate_dump(&s, &t, 3).map_err(|e| e.to_string())?;
            let a = derive_all(&run.dump, &t, &AnalysisOptions::default()).map_err(|e| e.to_string())?;
            let dev = (a.summary.median_utilization - target).abs();
            worst = worst.max(dev);
            ensure(dev <= 0.02, || {
                format!("target {target}, e={e}: analyzed {}", a.summary.median_utilization)
            })?;
        }
        details.push(format!("{target}: {worst:.1e}"));
    }
    Ok(format!("max |U - target| per target: {}", details.join(", ")))
}

fn service_trends() -> Outcome {
    let t = volta();
    let s = |n: u32, e: u32, c: u32| t.sample(GridCell::new(n, e, c)).unwrap() as f64 / n as f64;
    let mut checks = 0u64;
    for n in 1..=64 {
        for e in 1..=32 {
            for c in 0..=n {
                if n < 64 {
                    ensure(s(n + 1, e, c) <= s(n, e, c), || format!("S rises with n at ({n},{e},{c})"))?;
                    checks += 1;
                }
                if e < 32 {
                    ensure(s(n, e + 1, c) >= s(n, e, c), || format!("S falls with e at ({n},{e},{c})"))?;
                    checks += 1;
                }
                if c < n {
                    ensure(s(n, e, c + 1) >= s(n, e, c), || format!("S falls with c at ({n},{e},{c})"))?;
                    checks += 1;
                }
            }
        }
    }
    Ok(format!("{checks} neighbouring pairs monotone"))
}

fn load_sweep_shape() -> Outcome {
    let t = volta();
    let template = |e: u32| Scenario {
        kernel_name: "histogram-like".into(),
        gpu: GpuRef::Preset("titan-v".into()),
        sm_count: Some(4),
        jobs_per_sm: 1,
        active_threads: e,
        cas_fraction: 0.0,
        occupancy: 0.25,
        duration: DurationModel::Kernel {
            launch_overhead_cycles: 2000.0,
            issue_cycles_per_job: 15.0,
        },
        arrivals: ArrivalModel::ClosedBatches,
    };
    let spec: SweepSpec = "jobs_per_sm=16..16000000*10".parse().map_err(|e: atomql::sweep::SweepError| e.to_string())?;
    let curve = |e: u32| -> Result<Vec<f64>, String> {
        run_sweep(&template(e), &spec, &t, 1)
            .into_iter()
            .map(|r| r.median_utilization.ok_or(r.status))
            .collect()
    };
    let solid = curve(32)?;
    let random = curve(3)?;
    ensure(solid.windows(2).all(|w| w[1] >= w[0]), || format!("e=32 curve not nondecreasing: {solid:?}"))?;
    let peak = solid.iter().cloned().fold(0.0, f64::max);
    ensure(peak >= 0.99, || format!("e=32 peaks at {peak}"))?;
    let saturated: Vec<usize> = (0..solid.len()).filter(|&i| solid[i] >= 0.99).collect();
    for &i in &saturated {
        ensure(random[i] < solid[i], || format!("point {i}: e=3 {} vs e=32 {}", random[i], solid[i]))?;
    }
    let random_peak = random.iter().cloned().fold(0.0, f64::max);
    Ok(format!(
        "e=32 reaches {peak:.4}; e=3 peaks at {random_peak:.4}, below e=32 at all {} saturated points",
        saturated.len()
    ))
}

fn operational_laws() -> Outcome {
    let t = volta();
    let mut drained = 0;
    let shapes = [
        BatchShape { size: 16, cas: 4, count: 50 },
        BatchShape { size: 16, cas: 5, count: 10 },
        BatchShape { size: 7, cas: 7, count: 1 },
    ];
    let trace = simulate_closed_batches(&shapes, 9, &t).map_err(|e| e.to_string())?;
    let mut traces = vec![trace];
    for (seed, rate) in [(1, 0.001), (2, 0.02), (3, 0.2)] {
        let jobs = poisson_jobs(5000, rate, 20, 1000, seed);
        traces.push(simulate(&jobs, &t, Discipline::ProcessorSharing).map_err(|e| e.to_string())?);
        traces.push(simulate(&jobs, &t, Discipline::Fifo).map_err(|e| e.to_string())?);
    }
    for tr in &traces {
        ensure(tr.completions == tr.arrivals, || format!("C = {} but A = {}", tr.completions, tr.arrivals))?;
        ensure(tr.busy_cycles <= tr.total_time * (1.0 + 1e-12), || {
            format!("busy {} > total {}", tr.busy_cycles, tr.total_time)
        })?;
        drained += 1;
    }

    let s = 10.0;
    let rate = 0.06;
    let jobs = poisson_jobs(120_000, rate, 32, 0, 4);
    let trace = simulate(&jobs, &ConstantService(s), Discipline::ProcessorSharing).map_err(|e| e.to_string())?;
    ensure(trace.completions == trace.arrivals, || "Poisson run did not drain".into())?;
    let u = trace.utilization();
    let xs = trace.throughput() * s;
    let err = rel_err(u, xs);
    ensure(err <= 0.02, || format!("U = {u}, X*S = {xs}"))?;
    Ok(format!(
        "{drained} drained runs balanced; Poisson over {} jobs: U = {u:.4}, X*S = {xs:.4}",
        trace.completions
    ))
}

fn ingest_robustness() -> Outcome {
    let runner = |cases| TestRunner::new_with_rng(Config { cases, failure_persistence: None, ..Config::default() }, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let merge_cases = 1000;
    let fuzz_cases = 2000;

    let mut r = runner(merge_cases);
    r.run(&arb_dump(), |d| {
        let canonical = parse_canonical_str(&to_canonical_json(&d)).unwrap();
        prop_assert_eq!(&canonical, &d);
        for layout in [NvprofLayout::Long, NvprofLayout::Wide] {
            let per_sm_only = CounterDump {
                total_atomic_ops: None,
                ..d.clone()
            };
            let mut merged = parse_nvprof_str(&write_nvprof_csv(&per_sm_only, layout), &d.gpu).unwrap();
            if let Some(o) = d.total_atomic_ops {
                let agg = NcuAggregate {
                    kernel_name: d.kernel_name.clone(),
                    total_atomic_ops: o,
                };
                merged = merge(merged, &parse_ncu_str(&write_ncu_csv(&agg, d.gpu.sm_count)).unwrap()).unwrap();
            }
            prop_assert_eq!(&merged, &canonical);
        }
        Ok(())
    })
    .map_err(|e| format!("merge: {e}"))?;

    let accepted = Cell::new(0usize);
    let mut r = runner(fuzz_cases);
    let strategy = (arb_dump(), any::<bool>(), prop::collection::vec(arb_mutation(), 1..6));
    r.run(&strategy, |(d, wide, muts)| {
        let layout = if wide { NvprofLayout::Wide } else { NvprofLayout::Long };
        if let Ok(p) = parse_nvprof_str(&mutate(&write_nvprof_csv(&d, layout), &muts), &d.gpu) {
            prop_assert!(check_dump(&p).is_ok(), "{:?}", check_dump(&p));
            accepted.set(accepted.get() + 1);
        }
        if let Ok(p) = parse_canonical_str(&mutate(&to_canonical_json(&d), &muts)) {
            prop_assert!(check_dump(&p).is_ok(), "{:?}", check_dump(&p));
            accepted.set(accepted.get() + 1);
        }
        let agg = NcuAggregate {
            kernel_name: d.kernel_name.clone(),
            total_atomic_ops: d.total_atomic_ops.unwrap_or(0),
        };
        let _ = parse_ncu_str(&mutate(&write_ncu_csv(&agg, d.gpu.sm_count), &muts));
        Ok(())
    })
    .map_err(|e| format!("fuzz: {e}"))?;

    let mut r = runner(fuzz_cases);
    r.run(&"[ -~\n\"]{0,300}", |text| {
        if let Ok(p) = parse_nvprof_str(&text, &GpuSpec::titan_v()) {
            prop_assert!(check_dump(&p).is_ok());
        }
        if let Ok(p) = parse_canonical_str(&text) {
            prop_assert!(check_dump(&p).is_ok());
        }
        let _ = parse_ncu_str(&text);
        Ok(())
    })
    .map_err(|e| format!("random text: {e}"))?;

    Ok(format!(
        "{merge_cases} exact three-way merges; {} mutated and random inputs without a crash, {} accepted dumps valid",
        2 * fuzz_cases,
        accepted.get()
    ))
}

struct Criterion {
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { name: "interpolation exactness", limit: Some(Duration::from_secs(5)), run: interpolation_exactness },
        Criterion { name: "service time times load equals total time", limit: None, run: service_time_identity },
        Criterion { name: "closed-batch calibration loop", limit: Some(Duration::from_secs(30)), run: closed_batch_loop },
        Criterion { name: "derived quantities", limit: Some(Duration::from_secs(1)), run: derivations },
        Criterion { name: "end-to-end utilization recovery", limit: Some(Duration::from_secs(10)), run: utilization_recovery },
        Criterion { name: "service time trends", limit: None, run: service_trends },
        Criterion { name: "load sweep shape", limit: None, run: load_sweep_shape },
        Criterion { name: "operational laws in simulation", limit: Some(Duration::from_secs(60)), run: operational_laws },
        Criterion { name: "ingest robustness", limit: None, run: ingest_robustness },
    ];
    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:.2?}, limit {limit:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("[PASS] {}. {}: {detail} ({elapsed:.2?})", i + 1, c.name),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] {}. {}: {detail} ({elapsed:.2?})", i + 1, c.name);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
