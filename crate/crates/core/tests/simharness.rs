use watter_core::domain::OrderId;
use watter_core::spatial::Location;
use watter_core::simharness::{
    generate_workers, ingest_orders, orders_from_rows, run_simulation, simulate, synth_orders, write_order_rows,
    IngestStats, SimConfig, SimError, StrategyPolicy, SynthConfig,
};
use watter_core::strategy::StrategyKind;

#[test]
fn ingest_round_trips_the_generator() {
    let sim = SimConfig::default();
    let model = sim.travel_model().unwrap();
    let rows = synth_orders(&SynthConfig { orders: 1_000, pair_share: 0.3, seed: 9, ..SynthConfig::default() });
    let mut csv = Vec::new();
    write_order_rows(&rows, &mut csv).unwrap();
    let (orders, stats) = ingest_orders(&csv[..], &model, &sim).unwrap();
    assert_eq!(stats, IngestStats { rows: 1_000, malformed: 0, zero_cost: 0 });
    assert_eq!(orders.len(), rows.len());
    for (i, (o, r)) in orders.iter().zip(&rows).enumerate() {
        assert_eq!(o.id, OrderId(i as u32));
        assert_eq!(o.pickup, Location::geo(r.pickup_lon, r.pickup_lat));
        assert_eq!(o.dropoff, Location::geo(r.dropoff_lon, r.dropoff_lat));
        assert_eq!(o.riders, r.riders);
        assert_eq!(o.release, (r.release_time_s * 1000.0).round() as i64);
        let cost = model.travel_cost(&o.pickup, &o.dropoff).unwrap();
        assert_eq!(o.direct_cost, cost);
        assert_eq!(o.deadline, o.release + (1.6 * cost as f64).round() as i64);
        assert_eq!(o.wait_limit, (0.8 * cost as f64).round() as i64);
    }
}

#[test]
fn capacities_are_uniform() {
    let sim = SimConfig::default();
    let model = sim.travel_model().unwrap();
    let rows = synth_orders(&SynthConfig { orders: 50, ..SynthConfig::default() });
    let orders = orders_from_rows(rows, &model, &sim, &mut IngestStats::default()).unwrap();
    let workers = generate_workers(&orders, 10_000, 5, 3).unwrap();
    let mut counts = [0f64; 4];
    for w in &workers {
        counts[(w.capacity - 2) as usize] += 1.0;
    }
    let expected = 10_000.0 / 4.0;
    let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
    // 99th percentile of chi-square with 3 degrees of freedom
    assert!(chi2 < 11.345, "chi-square {chi2}, counts {counts:?}");
    assert!(workers.iter().all(|w| orders.iter().any(|o| o.pickup == w.location)));
}

#[test]
fn empty_fleet_rejects_everything_at_full_penalty() {
    let sim = SimConfig { workers: 0, strategy: StrategyKind::Online, ..SimConfig::default() };
    let model = sim.travel_model().unwrap();
    let rows = synth_orders(&SynthConfig { orders: 300, duration_s: 600.0, ..SynthConfig::default() });
    let orders = orders_from_rows(rows, &model, &sim, &mut IngestStats::default()).unwrap();
    let out = simulate(&orders, &model, &sim, None).unwrap();
    assert_eq!(out.report.served, 0);
    assert_eq!(out.report.rejected, orders.len());
    let penalties: i64 = orders.iter().map(|o| o.penalty()).sum();
    assert_eq!(out.report.total_extra_time_s, penalties as f64 / 1000.0);
    assert_eq!(out.report.worker_travel_s, 0.0);
}

#[test]
fn unsorted_and_duplicate_input_is_refused() {
    let sim = SimConfig { workers: 2, strategy: StrategyKind::Online, ..SimConfig::default() };
    let model = sim.travel_model().unwrap();
    let rows = synth_orders(&SynthConfig { orders: 20, ..SynthConfig::default() });
    let orders = orders_from_rows(rows, &model, &sim, &mut IngestStats::default()).unwrap();
    let workers = generate_workers(&orders, 2, 3, 1).unwrap();
    let grid = watter_core::simharness::grid_for(&orders, &sim);
    let mut policy = StrategyPolicy::new(sim.decision_strategy(), None).unwrap();

    let mut swapped = orders.clone();
    swapped.swap(0, 19);
    let err = run_simulation(&swapped, workers.clone(), &model, &grid, &sim, &mut policy).unwrap_err();
    assert!(matches!(err, SimError::Unsorted { .. }), "{err}");

    let mut dup = orders.clone();
    dup[1].id = dup[0].id;
    let err = run_simulation(&dup, workers, &model, &grid, &sim, &mut policy).unwrap_err();
    assert!(matches!(err, SimError::Input(_)), "{err}");
}
