mod common;

use std::sync::OnceLock;

use atomql::gpu::GpuSpec;
use atomql::param_table::{parse_table, write_table, GridCell, ParamTable, TableError};
use atomql::queue_sim::{synthesize_table, SyntheticFamily};
use common::{default_family_service, rel_err, CornerOracle};
use proptest::prelude::*;

fn volta() -> &'static (ParamTable, CornerOracle) {
    static T: OnceLock<(ParamTable, CornerOracle)> = OnceLock::new();
    T.get_or_init(|| {
        let t = synthesize_table(&GpuSpec::titan_v(), &SyntheticFamily::default()).unwrap();
        let o = CornerOracle::new(&t);
        (t, o)
    })
}

#[test]
fn synthetic_table_matches_closed_form() {
    let (t, _) = volta();
    for (cell, total) in t.cells() {
        let s = default_family_service(cell.n, cell.e, cell.c);
        assert_eq!(total as f64, cell.n as f64 * s, "{cell}");
    }
}

#[test]
fn grid_points_are_exact_everywhere() {
    let (t, o) = volta();
    for (cell, total) in t.cells() {
        let got = t.total_time(cell.n as f64, cell.e as f64, cell.c as f64).unwrap();
        assert_eq!(got.cycles, total as f64, "{cell}");
        assert_eq!(o.sample(cell.n, cell.e, cell.c), total as f64);
        assert!(!got.clamps.any());
    }
}

#[test]
fn ragged_layers_clamp_c_per_layer() {
    let (t, o) = volta();
    let got = t.total_time(2.5, 3.0, 2.4).unwrap().cycles;
    let t2 = t.sample(GridCell::new(2, 3, 2)).unwrap() as f64;
    let t3a = t.sample(GridCell::new(3, 3, 2)).unwrap() as f64;
    let t3b = t.sample(GridCell::new(3, 3, 3)).unwrap() as f64;
    let want = 0.5 * t2 + 0.5 * (0.6 * t3a + 0.4 * t3b);
    assert!(rel_err(got, want) < 1e-12);
    assert!(rel_err(o.total_time(2.5, 3.0, 2.4), want) < 1e-12);
}

#[test]
fn below_one_warp_interpolates_to_zero() {
    let (t, _) = volta();
    let t1 = t.sample(GridCell::new(1, 7, 0)).unwrap() as f64;
    assert!(rel_err(t.total_time(0.25, 7.0, 0.0).unwrap().cycles, 0.25 * t1) < 1e-12);
    assert_eq!(t.total_time(0.0, 7.0, 0.0).unwrap().cycles, 0.0);
}

#[test]
fn clamping_policy() {
    let (t, _) = volta();
    let hi = t.total_time(80.0, 40.0, 90.0).unwrap();
    assert!(hi.clamps.n && hi.clamps.e && hi.clamps.c);
    assert_eq!(hi.cycles, t.sample(GridCell::new(64, 32, 64)).unwrap() as f64);
    let lo = t.total_time(4.0, 0.5, 0.0).unwrap();
    assert!(lo.clamps.e && !lo.clamps.n);
    for (n, e, c) in [(f64::NAN, 1.0, 0.0), (1.0, f64::INFINITY, 0.0), (1.0, 1.0, f64::NAN), (-1.0, 1.0, 0.0)] {
        assert!(matches!(t.total_time(n, e, c), Err(TableError::OutOfRange { .. })));
    }
    assert!(matches!(t.service_time(0.0, 1.0, 0.0), Err(TableError::ZeroLoad)));
}

#[test]
fn file_round_trip_is_bit_exact() {
    for gpu in [GpuSpec::titan_v(), GpuSpec::a6000()] {
        let t = synthesize_table(&gpu, &SyntheticFamily::default()).unwrap();
        let mut buf = Vec::new();
        write_table(&t, &mut buf).unwrap();
        let back = parse_table(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, t);
    }
}

proptest! {
    #[test]
    fn matches_corner_oracle(n in 0.0f64..=64.0, e in 1.0f64..=32.0, frac in 0.0f64..=1.0) {
        let (t, o) = volta();
        let c = frac * n;
        let got = t.total_time(n, e, c).unwrap().cycles;
        prop_assert!(rel_err(got, o.total_time(n, e, c)) <= 1e-12);
    }

    #[test]
    fn service_time_times_load_is_total_time(n in 0.01f64..=64.0, e in 1.0f64..=32.0, frac in 0.0f64..=1.0) {
        let (t, _) = volta();
        let c = frac * n;
        let s = t.service_time(n, e, c).unwrap().cycles;
        let total = t.total_time(n, e, c).unwrap().cycles;
        prop_assert!(rel_err(s * n, total) <= 1e-12);
    }

    #[test]
    fn bounded_by_surrounding_samples(n in 1.0f64..=64.0, e in 1.0f64..=32.0, frac in 0.0f64..=1.0) {
        let (t, _) = volta();
        let c = frac * n;
        let got = t.total_time(n, e, c).unwrap().cycles;
        let (n0, n1) = (n.floor() as u32, (n.ceil() as u32).min(64));
        let (e0, e1) = (e.floor() as u32, (e.ceil() as u32).min(32));
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for nn in [n0, n1] {
            for ee in [e0, e1] {
                for cc in [0, nn] {
                    let v = t.sample(GridCell::new(nn, ee, cc)).unwrap() as f64;
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
        }
        prop_assert!(got >= lo * (1.0 - 1e-12) && got <= hi * (1.0 + 1e-12));
    }
}
