use proptest::prelude::*;

use nvis_reliability::dependability::RedundancyMode;
use nvis_reliability::engine::{run, RunConfig};
use nvis_reliability::experiment::{build_grid, run_cell, GridSpec};
use nvis_reliability::transport::Protocol;

fn protocol() -> impl Strategy<Value = Protocol> {
    prop::sample::select(Protocol::ALL.to_vec())
}

fn mode() -> impl Strategy<Value = RedundancyMode> {
    prop::sample::select(RedundancyMode::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ledgers_stay_consistent(
        p in protocol(),
        m in mode(),
        stations in 1u32..=5,
        clusters in prop::sample::select(vec![8u32, 16, 32]),
        pb0 in 0.0..0.3f64,
        seed in any::<u64>(),
    ) {
        let mut cfg = RunConfig { protocol: p, mode: m, pb0, ..RunConfig::default() };
        cfg.topology.clusters_per_gateway = clusters;
        cfg.topology.stations_per_cluster = stations;
        let r = run(&cfg, seed).unwrap();
        prop_assert!(r.packets.is_conserved());
        let tx = r.transactions;
        prop_assert!(tx.successful <= tx.total);
        prop_assert!(tx.faulty <= tx.sensed);
        let units = if m == RedundancyMode::None { clusters * stations } else { clusters };
        prop_assert!(tx.total + tx.silent <= 120 * 5 * u64::from(units));
        let metrics = r.metrics.unwrap();
        for x in [metrics.str, metrics.pdr, metrics.fsr].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        prop_assert_eq!(r, run(&cfg, seed).unwrap());
    }

    #[test]
    fn silent_rounds_count_only_when_asked(p in protocol(), seed in any::<u64>()) {
        let mut cfg = RunConfig { protocol: p, pb0: 0.1, ..RunConfig::default() };
        let a = run(&cfg, seed).unwrap().transactions;
        cfg.count_silent_as_failure = true;
        let b = run(&cfg, seed).unwrap().transactions;
        prop_assert_eq!(b.total, a.total + a.silent);
        prop_assert_eq!(a.successful, b.successful);
    }
}

#[test]
fn cells_do_not_depend_on_run_order() {
    let grid = build_grid(&GridSpec::default());
    let cells = [grid[0], grid[17], grid[29]];
    let base = RunConfig::default();
    let forward: Vec<_> = cells
        .iter()
        .map(|c| run_cell(&base, c, RedundancyMode::Social, Protocol::Copa, 4, 3).unwrap())
        .collect();
    let mut backward: Vec<_> = cells
        .iter()
        .rev()
        .map(|c| run_cell(&base, c, RedundancyMode::Social, Protocol::Copa, 4, 3).unwrap())
        .collect();
    backward.reverse();
    assert_eq!(forward, backward);
}

#[test]
fn lower_availability_never_helps_on_a_light_cell() {
    let mut last = f64::INFINITY;
    for a in [1.0, 0.8, 0.5, 0.2] {
        let cfg = RunConfig {
            force_availability: Some(a),
            pb0: 0.0,
            wear_per_hour: 0.0,
            ..RunConfig::default()
        };
        let mean = (0..5).map(|s| run(&cfg, s).unwrap().metrics.unwrap().str.unwrap()).sum::<f64>() / 5.0;
        assert!(mean <= last + 1e-9, "availability {a}: {mean} after {last}");
        last = mean;
    }
}
