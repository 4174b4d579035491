//! Randomized insert/remove/expire sequences checked against a brute-force
//! scan of every subset of pending orders.

mod common;

#[test]
fn best_groups_match_brute_force() {
    let pooled = common::pool_sequences(0..4, 125, 25);
    assert!(pooled > 100, "only {pooled} pooled best groups seen");
}

#[test]
fn clique_enumeration_matches_subset_scan() {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use watter_core::domain::{Group, OrderId};
    use watter_core::poolgraph::{PoolConfig, ShareGraph};
    use watter_core::spatial::TravelModel;

    let model = TravelModel::geodesic(10.0).unwrap();
    let mut total_pairs = 0;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut graph = ShareGraph::new(&model, PoolConfig::default());
        for id in 0..20 {
            let t = rng.gen_range(0..20_000);
            graph.insert_order(common::random_order(&mut rng, &model, id, t), 20_000).unwrap();
        }
        let ids: Vec<OrderId> = (0..20).map(OrderId).collect();
        let linked = |a: OrderId, b: OrderId| graph.edge_expiry(a, b).is_some();
        for k_max in 1..=4 {
            for &v in &ids {
                let mut want = vec![Group::singleton(v)];
                // every subset of up to three other nodes
                let others: Vec<OrderId> = ids.iter().copied().filter(|&i| i != v).collect();
                let mut subsets: Vec<Vec<OrderId>> = vec![vec![]];
                for &o in &others {
                    let grown: Vec<Vec<OrderId>> = subsets
                        .iter()
                        .filter(|s| s.len() + 1 < k_max)
                        .map(|s| s.iter().copied().chain([o]).collect())
                        .collect();
                    subsets.extend(grown);
                }
                for mut members in subsets.into_iter().filter(|s| !s.is_empty()) {
                    members.push(v);
                    let clique = members.iter().enumerate().all(|(i, &a)| members[i + 1..].iter().all(|&b| linked(a, b)));
                    if clique {
                        want.push(Group::new(members));
                    }
                }
                want.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.members().cmp(b.members())));
                assert_eq!(graph.enumerate_cliques_containing(v, k_max).unwrap(), want, "node {v}, k_max {k_max}");
                if k_max == 2 {
                    total_pairs += want.len() - 1;
                }
            }
        }
    }
    assert!(total_pairs > 20, "graphs too sparse: {total_pairs} edge ends");
}
