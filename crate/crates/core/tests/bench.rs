use atp_core::bench::{measured_run, predicted_ops, scaling_sweep, BenchDims, BenchMode, RunConfig, SweepConfig};
use atp_core::{Dtype, Error};
use proptest::prelude::*;

fn run(dims: BenchDims, mode: BenchMode, precision: Dtype) -> atp_core::bench::RunRecord {
    let cfg = RunConfig { dims, mode, seed: 1, repeats: 1, precision, budget_bytes: u64::MAX };
    measured_run(&cfg).unwrap().0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn instrumented_equals_predicted(
        l in 1usize..80, r in 1usize..12, d in 1usize..24, dp in 1usize..16, it in 1usize..4, f32 in any::<bool>(),
    ) {
        let r = r.min(l.min(d));
        let dims = BenchDims { length: l, r, d, hidden: dp, inner_iters: it };
        let precision = if f32 { Dtype::F32 } else { Dtype::F64 };
        for mode in BenchMode::ALL {
            let rec = run(dims, mode, precision);
            prop_assert!(rec.stages.same_tally(&predicted_ops(&dims, mode)), "{mode:?}: {:?}", rec.stages);
        }
    }

    #[test]
    fn score_memory_ratio_is_length_over_rank(l in 1usize..96, r in 1usize..16) {
        let r = r.min(l);
        let dims = BenchDims { length: l, r, d: 16.max(r), hidden: 4, inner_iters: 2 };
        let std = run(dims, BenchMode::Standard, Dtype::F64).peak_score_entries;
        let low = run(dims, BenchMode::Lowrank, Dtype::F64).peak_score_entries;
        prop_assert_eq!(std * r as u64, low * l as u64);
    }
}

#[test]
fn wall_time_grows_with_length() {
    let cfg =
        SweepConfig { lengths: vec![256, 1024, 4096], r: 32, d: 64, hidden: 32, repeats: 3, ..Default::default() };
    let rep = scaling_sweep(&cfg).unwrap();
    for mode in BenchMode::ALL {
        let walls: Vec<u64> = cfg.lengths.iter().map(|&l| rep.run(l, mode).unwrap().1.wall_ns).collect();
        assert!(walls.windows(2).all(|w| w[1] >= w[0]), "{mode:?}: {walls:?}");
    }
    let ops = rep.op_slopes.unwrap();
    assert!((ops.standard - 2.0).abs() < 1e-12 && (ops.lowrank - 1.0).abs() < 1e-12);
}

#[test]
fn single_length_omits_slopes() {
    let cfg = SweepConfig { lengths: vec![64], r: 4, d: 8, hidden: 8, repeats: 1, ..Default::default() };
    let rep = scaling_sweep(&cfg).unwrap();
    assert_eq!(rep.runs.len(), 2);
    assert!(rep.op_slopes.is_none() && rep.timing.slopes.is_none());
    let json = serde_json::to_value(&rep).unwrap();
    assert!(json.get("op_slopes").is_none());
    assert!(json["timing"]["runs"][0]["wall_ns"].is_u64());
}

#[test]
fn budget_refusal_happens_before_any_run() {
    let cfg = SweepConfig {
        lengths: vec![64, 1 << 20],
        r: 4,
        d: 8,
        hidden: 8,
        repeats: 1,
        budget_bytes: 1 << 30,
        ..Default::default()
    };
    match scaling_sweep(&cfg) {
        Err(Error::ResourceRefused { predicted_bytes, budget_bytes }) => {
            assert!(predicted_bytes > budget_bytes);
        }
        other => panic!("expected refusal, got {other:?}"),
    }
}

#[test]
fn bad_sweeps_are_rejected() {
    let base = SweepConfig { r: 4, d: 8, hidden: 8, repeats: 1, ..Default::default() };
    for lengths in [vec![], vec![64, 32], vec![64, 64]] {
        assert!(scaling_sweep(&SweepConfig { lengths, ..base.clone() }).is_err());
    }
    assert!(scaling_sweep(&SweepConfig { lengths: vec![2], ..base }).is_err(), "r > L");
}
