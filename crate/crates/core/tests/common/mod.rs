//! Shared brute-force oracles for integration tests.

#![allow(dead_code)]

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use watter_core::domain::{Group, Order, OrderId};
use watter_core::poolgraph::{compare_candidates, PoolConfig, RemovalCause, ShareGraph};
use watter_core::routing::{group_score, plan_best_route, PlanContext};
use watter_core::spatial::{Location, TravelModel};
use watter_core::time::Millis;

fn subsets_containing(pivot: OrderId, others: &[OrderId], k: usize) -> Vec<Vec<OrderId>> {
    let mut out = vec![vec![pivot]];
    if k >= 2 {
        for (i, &a) in others.iter().enumerate() {
            out.push(vec![pivot, a]);
            if k >= 3 {
                for &b in &others[i + 1..] {
                    out.push(vec![pivot, a, b]);
                }
            }
        }
    }
    out
}

pub fn brute_best(
    pivot: OrderId,
    pending: &[Order],
    model: &TravelModel,
    cfg: &PoolConfig,
    t: Millis,
    graph: &ShareGraph<'_>,
) -> Option<(Group, f64)> {
    let ctx = PlanContext { model, t_now: t, worker_origin: None, capacity: cfg.capacity, max_group: cfg.max_group };
    let find = |id: OrderId| pending.iter().find(|o| o.id == id).unwrap();
    let others: Vec<OrderId> = pending.iter().map(|o| o.id).filter(|&id| id != pivot).collect();
    let mut best: Option<(Group, f64)> = None;
    for ids in subsets_containing(pivot, &others, cfg.max_group) {
        let members: Vec<&Order> = ids.iter().map(|&id| find(id)).collect();
        if members.iter().map(|o| o.riders).sum::<u32>() > cfg.capacity {
            continue;
        }
        let Some(route) = plan_best_route(&members, &ctx).unwrap() else { continue };
        // feasible groups must be cliques of the graph
        for (i, a) in ids.iter().enumerate() {
            for b in &ids[i + 1..] {
                assert!(graph.edge_expiry(*a, *b).is_some(), "feasible group {ids:?} is not a clique at t={t}");
            }
        }
        let group = Group::new(ids.iter().copied());
        let score = group_score(&members, &route, cfg.weights);
        let better = match &best {
            None => true,
            Some((g, s)) => compare_candidates(score, &group, *s, g) == Ordering::Less,
        };
        if better {
            best = Some((group, score));
        }
    }
    best
}

pub fn random_order(rng: &mut ChaCha8Rng, model: &TravelModel, id: u32, t: Millis) -> Order {
    // half the trips run between two hotspots so pooling is common
    let (p, d) = if rng.gen_bool(0.5) {
        (
            Location::geo(rng.gen_range(0.0..0.004), rng.gen_range(0.0..0.004)),
            Location::geo(rng.gen_range(0.026..0.03), rng.gen_range(0.026..0.03)),
        )
    } else {
        (
            Location::geo(rng.gen_range(0.0..0.03), rng.gen_range(0.0..0.03)),
            Location::geo(rng.gen_range(0.0..0.03), rng.gen_range(0.0..0.03)),
        )
    };
    let direct = model.travel_cost(&p, &d).unwrap().max(1);
    let deadline = t + (direct as f64 * rng.gen_range(1.3..2.2)) as Millis + 1;
    Order::new(OrderId(id), p, d, 1, t, deadline, 0, direct).unwrap()
}

pub fn check_all(graph: &ShareGraph<'_>, pending: &[Order], model: &TravelModel, cfg: &PoolConfig, t: Millis) -> usize {
    let mut pooled = 0;
    for o in pending {
        let entry = graph.best_group(o.id).unwrap();
        let expect = brute_best(o.id, pending, model, cfg, t, graph);
        match expect {
            None => assert!(entry.is_empty(), "order {} at t={t}: expected empty, got {:?}", o.id, entry.group),
            Some((g, s)) => {
                pooled += (g.len() > 1) as usize;
                assert_eq!(entry.group.as_ref(), Some(&g), "order {} at t={t}", o.id);
                assert_eq!(entry.score, s);
                for m in g.members() {
                    assert!(graph.contains(*m));
                }
            }
        }
    }
    pooled
}

/// Runs `events` random insert, departure and expiration steps on one graph
/// per seed, checking every best group after each step. Returns how many
/// checked best groups held more than one order.
pub fn pool_sequences(seeds: std::ops::Range<u64>, events: usize, max_pending: usize) -> usize {
    let model = TravelModel::geodesic(10.0).unwrap();
    let cfg = PoolConfig::default();
    let mut pooled = 0;
    for seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut graph = ShareGraph::new(&model, cfg);
        let mut pending: Vec<Order> = Vec::new();
        let mut t: Millis = 0;
        let mut next_id = 0u32;
        for _ in 0..events {
            t += rng.gen_range(0..15_000);
            graph.expire(t).unwrap();
            let roll = rng.gen_range(0..10);
            if roll < 5 && pending.len() < max_pending {
                let o = random_order(&mut rng, &model, next_id, t);
                next_id += 1;
                graph.insert_order(o.clone(), t).unwrap();
                pending.push(o);
            } else if roll < 8 && !pending.is_empty() {
                let pick = pending[rng.gen_range(0..pending.len())].id;
                let group = graph.best_group(pick).unwrap().group.clone().unwrap_or(Group::singleton(pick));
                graph.remove_orders(&group, RemovalCause::Departure, t).unwrap();
                pending.retain(|o| !group.contains(o.id));
            } else if !pending.is_empty() {
                let pick = pending[rng.gen_range(0..pending.len())].id;
                if let Some(g) = graph.best_group(pick).unwrap().group.clone() {
                    graph.remove_orders(&g, RemovalCause::Expiration, t).unwrap();
                }
            }
            pooled += check_all(&graph, &pending, &model, &cfg, t);
        }
    }
    pooled
}
