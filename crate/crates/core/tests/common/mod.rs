//! Oracles and generators shared by the integration tests and the
//! acceptance runner.
#![allow(dead_code)]

use std::collections::HashMap;

use atomql::gpu::GpuSpec;
use atomql::ingest::{CounterDump, SmCounters};
use atomql::param_table::{write_table, ParamTable};
use proptest::prelude::*;

/// Trilinear interpolation written as an explicit weighted sum over the
/// eight surrounding samples, read back from the table's CSV rows.
pub struct CornerOracle {
    rows: HashMap<(u32, u32, u32), f64>,
    n_max: u32,
}

impl CornerOracle {
    pub fn new(table: &ParamTable) -> Self {
        let mut buf = Vec::new();
        write_table(table, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut rows = HashMap::new();
        for line in text.lines() {
            if line.starts_with('#') || line.starts_with("n,") {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let key = (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap());
            rows.insert(key, f[3].parse::<u64>().unwrap() as f64);
        }
        CornerOracle {
            rows,
            n_max: table.n_max(),
        }
    }

    pub fn sample(&self, n: u32, e: u32, c: u32) -> f64 {
        if n == 0 {
            return 0.0;
        }
        self.rows[&(n, e, c)]
    }

    /// `T(n, e, c)` for `0 <= n <= n_max`, `1 <= e <= 32`, `0 <= c <= n`.
    pub fn total_time(&self, n: f64, e: f64, c: f64) -> f64 {
        let n_lo = (n.floor() as u32).min(self.n_max - 1);
        let e_lo = (e.floor() as u32).min(31);
        let wn = [(n_lo, 1.0 - (n - n_lo as f64)), (n_lo + 1, n - n_lo as f64)];
        let we = [(e_lo, 1.0 - (e - e_lo as f64)), (e_lo + 1, e - e_lo as f64)];
        let mut sum = 0.0;
        for &(layer, w_n) in &wn {
            if layer == 0 {
                continue;
            }
            let cl = c.min(layer as f64);
            let c_lo = (cl.floor() as u32).min(layer - 1);
            let wc = [(c_lo, 1.0 - (cl - c_lo as f64)), (c_lo + 1, cl - c_lo as f64)];
            for &(ee, w_e) in &we {
                for &(cc, w_c) in &wc {
                    sum += w_n * w_e * w_c * self.sample(layer, ee, cc);
                }
            }
        }
        sum
    }
}

/// Closed form of the default synthetic family, coded from its definition.
pub fn default_family_service(n: u32, e: u32, c: u32) -> f64 {
    let (n, e, c) = (n as f64, e as f64, c as f64);
    let s = (16.0 * e + 64.0) * (1.0 + c / n) / n.min(32.0) + 4.0;
    s.round()
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        ((got - want) / want).abs()
    }
}

pub fn arb_gpu() -> impl Strategy<Value = GpuSpec> {
    (
        prop_oneof![Just("titan-v".to_string()), Just("a6000".to_string()), "[a-z][a-z0-9_-]{0,12}"],
        1u32..=64,
        1u32..=96,
    )
        .prop_map(|(name, w, s)| GpuSpec::new(name, w, s).unwrap())
}

/// Occupancies that survive any decimal printing.
fn arb_occupancy() -> impl Strategy<Value = f64> {
    prop_oneof![
        Just(0.0),
        Just(1.0),
        0.0f64..=1.0,
        (0u32..=64, 1u32..=64).prop_map(|(a, b)| (a.min(b) as f64) / b as f64),
    ]
}

/// Valid dumps with SMs in ascending order.
pub fn arb_dump() -> impl Strategy<Value = CounterDump> {
    arb_gpu().prop_flat_map(|gpu| {
        let sms = gpu.sm_count;
        (
            Just(gpu),
            "[ -~]{0,24}",
            proptest::option::of(any::<u64>()),
            proptest::sample::subsequence((0..sms).collect::<Vec<_>>(), 1..=sms as usize),
        )
            .prop_flat_map(|(gpu, name, o, ids)| {
                let n = ids.len();
                let rows = proptest::collection::vec(
                    (
                        prop_oneof![Just(0u64), 0u64..1_000_000, any::<u64>().prop_map(|x| x >> 2)],
                        prop_oneof![Just(0u64), 0u64..1_000_000, any::<u64>().prop_map(|x| x >> 2)],
                        1u64..=u64::MAX,
                        arb_occupancy(),
                    ),
                    n,
                );
                (Just(gpu), Just(name), Just(o), Just(ids), rows)
            })
            .prop_map(|(gpu, name, o, ids, rows)| CounterDump {
                kernel_name: name.trim().to_string(),
                gpu,
                total_atomic_ops: o,
                per_sm: ids
                    .into_iter()
                    .zip(rows)
                    .map(|(sm, (f, c, t, occ))| SmCounters {
                        sm_index: sm,
                        fao_warp_instructions: f,
                        cas_warp_instructions: c,
                        active_cycles: t,
                        achieved_occupancy: occ,
                    })
                    .collect(),
            })
    })
}

/// Invariants every accepted dump must satisfy.
pub fn check_dump(d: &CounterDump) -> Result<(), String> {
    d.validate().map_err(|e| e.to_string())?;
    if d.per_sm.windows(2).any(|w| w[0].sm_index >= w[1].sm_index) {
        return Err("SMs not strictly ascending".into());
    }
    for sm in &d.per_sm {
        if sm.sm_index >= d.gpu.sm_count {
            return Err(format!("SM {} out of range", sm.sm_index));
        }
        if !(0.0..=1.0).contains(&sm.achieved_occupancy) {
            return Err(format!("occupancy {}", sm.achieved_occupancy));
        }
        if sm.total_jobs() > 0 && sm.active_cycles == 0 {
            return Err(format!("SM {} ran jobs in zero cycles", sm.sm_index));
        }
    }
    Ok(())
}

/// Text edits applied to a valid export to probe parser robustness.
#[derive(Debug, Clone)]
pub enum Mutation {
    DropLine(usize),
    DuplicateLine(usize),
    ReplaceByte(usize, u8),
    Insert(usize, String),
    Truncate(usize),
}

pub fn arb_mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        any::<usize>().prop_map(Mutation::DropLine),
        any::<usize>().prop_map(Mutation::DuplicateLine),
        (any::<usize>(), prop_oneof![any::<u8>(), Just(b','), Just(b'"'), Just(b'\n'), Just(b'-'), Just(b'.')])
            .prop_map(|(i, b)| Mutation::ReplaceByte(i, b)),
        (
            any::<usize>(),
            prop_oneof![
                Just(",".to_string()),
                Just("\"".to_string()),
                Just("NaN".to_string()),
                Just("-1".to_string()),
                Just("1e400".to_string()),
                Just("99999999999999999999999".to_string()),
                "[ -~]{0,8}",
            ]
        )
            .prop_map(|(i, s)| Mutation::Insert(i, s)),
        any::<usize>().prop_map(Mutation::Truncate),
    ]
}

pub fn mutate(text: &str, muts: &[Mutation]) -> String {
    let mut bytes = text.as_bytes().to_vec();
    for m in muts {
        let len = bytes.len().max(1);
        match m {
            Mutation::DropLine(i) | Mutation::DuplicateLine(i) => {
                let s = String::from_utf8_lossy(&bytes).into_owned();
                let mut lines: Vec<&str> = s.lines().collect();
                if lines.is_empty() {
                    continue;
                }
                let k = i % lines.len();
                if matches!(m, Mutation::DropLine(_)) {
                    lines.remove(k);
                } else {
                    lines.insert(k, lines[k]);
                }
                bytes = (lines.join("\n") + "\n").into_bytes();
            }
            Mutation::ReplaceByte(i, b) => {
                if !bytes.is_empty() {
                    bytes[i % len] = *b;
                }
            }
            Mutation::Insert(i, s) => {
                let at = i % (bytes.len() + 1);
                bytes.splice(at..at, s.bytes());
            }
            Mutation::Truncate(i) => bytes.truncate(i % len),
        }
    }
    String::from_utf8_lossy(&bytes).into_owned()
}
