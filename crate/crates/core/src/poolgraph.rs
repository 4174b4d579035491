//! Temporal shareability graph over pending orders.
//!
//! Nodes are pending orders, and an edge joins two orders that can currently
//! ride together. Every order keeps its best group: the clique containing it
//! (singletons included) whose cheapest feasible route has the lowest average
//! extra time.
//!
//! The graph stores every feasible clique with its cheapest route, and each
//! order keeps its cliques ranked. Two facts keep this exact without
//! re-planning on every clock tick:
//!
//! * Average extra time is `score + beta * t`, where `score` does not depend
//!   on `t`. Ranking groups by `score` therefore ranks them at any instant.
//! * A group's cheapest route stays cheapest until that route itself expires,
//!   because time only removes interleavings from the feasible set. Only then
//!   is the group re-planned (or dropped when nothing is left).
//!
//! An edge lives until the latest expiry over all interleavings of the pair.
//! While a set of orders has a feasible route, each of its pairs has one too
//! (dropping stops never lengthens a prefix), so every feasible group is a
//! clique, and cliques only form when an order arrives. The optional grid
//! prefilter gives up that guarantee for speed by only probing orders with
//! nearby pickups.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::Serialize;
use thiserror::Error;

use crate::domain::{ExtraTimeWeights, Group, Order, OrderId, RoutePlan};
use crate::routing::{self, PlanContext, RoutingError};
use crate::spatial::{GridIndex, TravelModel};
use crate::time::Millis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoolError {
    #[error("order {0} is already pending")]
    Duplicate(OrderId),
    #[error("order {0} is not pending")]
    Unknown(OrderId),
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoolConfig {
    /// Largest group size (the vehicle capacity cap).
    pub max_group: usize,
    /// Rider capacity assumed while planning pooled routes.
    pub capacity: u32,
    pub weights: ExtraTimeWeights,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { max_group: 3, capacity: 3, weights: ExtraTimeWeights::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemovalCause {
    /// The orders left the pool (dispatched or rejected).
    Departure,
    /// The group can no longer be dispatched along its current route.
    Expiration,
}

/// Cached best group of one order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestGroupEntry {
    pub group: Option<Group>,
    pub route: Option<RoutePlan>,
    /// Average extra time (ms) at `refreshed_at`; infinite when empty.
    pub avg_extra: f64,
    /// `avg_extra - beta * refreshed_at`.
    pub score: f64,
    pub refreshed_at: Millis,
    /// When the route stops being feasible; `Millis::MAX` when empty.
    pub expiry: Millis,
}

impl BestGroupEntry {
    fn empty(t: Millis) -> Self {
        BestGroupEntry {
            group: None,
            route: None,
            avg_extra: f64::INFINITY,
            score: f64::INFINITY,
            refreshed_at: t,
            expiry: Millis::MAX,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.group.is_none()
    }

    /// Average extra time (ms) if dispatched at `t`.
    pub fn avg_extra_at(&self, t: Millis, weights: ExtraTimeWeights) -> f64 {
        self.score + weights.beta * t as f64
    }
}

/// A feasible group with its cheapest route.
#[derive(Debug, Clone)]
pub struct Evaluated {
    pub group: Group,
    pub route: RoutePlan,
    pub score: f64,
}

/// Total order on candidate groups: lower score, then fewer members, then
/// smaller member ids.
pub fn compare_candidates(a_score: f64, a: &Group, b_score: f64, b: &Group) -> Ordering {
    a_score
        .total_cmp(&b_score)
        .then(a.len().cmp(&b.len()))
        .then_with(|| a.members().cmp(b.members()))
}

#[derive(Debug, Clone)]
struct Ranked {
    score: f64,
    group: Group,
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        compare_candidates(self.score, &self.group, other.score, &other.group)
    }
}

#[derive(Debug, Clone)]
struct Prefilter {
    grid: GridIndex,
    ring: usize,
}

#[derive(Debug, Clone)]
pub struct ShareGraph<'m> {
    model: &'m TravelModel,
    config: PoolConfig,
    prefilter: Option<Prefilter>,
    orders: BTreeMap<OrderId, Order>,
    adj: BTreeMap<OrderId, BTreeMap<OrderId, Millis>>,
    /// Every feasible clique with its cheapest route and score.
    cliques: BTreeMap<Group, (RoutePlan, f64)>,
    /// Each order's cliques, best first.
    ranked: BTreeMap<OrderId, BTreeSet<Ranked>>,
    best: BTreeMap<OrderId, BestGroupEntry>,
    clique_heap: BinaryHeap<Reverse<(Millis, Group)>>,
    edge_heap: BinaryHeap<Reverse<(Millis, OrderId, OrderId)>>,
    plans_evaluated: u64,
}

#[derive(Debug, Serialize)]
pub struct GraphDump {
    pub nodes: Vec<OrderId>,
    pub edges: Vec<(OrderId, OrderId, Millis)>,
    pub best: BTreeMap<OrderId, DumpEntry>,
}

#[derive(Debug, Serialize)]
pub struct DumpEntry {
    pub group: Option<Vec<OrderId>>,
    pub avg_extra_ms: Option<f64>,
    pub expiry_ms: Option<Millis>,
}

impl<'m> ShareGraph<'m> {
    pub fn new(model: &'m TravelModel, config: PoolConfig) -> Self {
        ShareGraph {
            model,
            config,
            prefilter: None,
            orders: BTreeMap::new(),
            adj: BTreeMap::new(),
            cliques: BTreeMap::new(),
            ranked: BTreeMap::new(),
            best: BTreeMap::new(),
            clique_heap: BinaryHeap::new(),
            edge_heap: BinaryHeap::new(),
            plans_evaluated: 0,
        }
    }

    /// Only probe orders whose pickups fall within `ring` cells of the new
    /// order's pickup. `grid` should be empty.
    pub fn with_prefilter(mut self, grid: GridIndex, ring: usize) -> Self {
        self.prefilter = Some(Prefilter { grid, ring });
        self
    }

    pub fn config(&self) -> &PoolConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    pub fn contains(&self, id: OrderId) -> bool {
        self.orders.contains_key(&id)
    }

    pub fn order(&self, id: OrderId) -> Option<&Order> {
        self.orders.get(&id)
    }

    pub fn pending(&self) -> impl Iterator<Item = &Order> {
        self.orders.values()
    }

    pub fn pending_ids(&self) -> Vec<OrderId> {
        self.orders.keys().copied().collect()
    }

    pub fn edge_expiry(&self, a: OrderId, b: OrderId) -> Option<Millis> {
        self.adj.get(&a).and_then(|n| n.get(&b)).copied()
    }

    pub fn neighbors(&self, id: OrderId) -> impl Iterator<Item = OrderId> + '_ {
        self.adj.get(&id).into_iter().flat_map(|n| n.keys().copied())
    }

    pub fn edge_count(&self) -> usize {
        self.adj.values().map(BTreeMap::len).sum::<usize>() / 2
    }

    /// Number of feasible cliques currently stored.
    pub fn clique_count(&self) -> usize {
        self.cliques.len()
    }

    /// Number of route plans computed so far (a cost counter).
    pub fn plans_evaluated(&self) -> u64 {
        self.plans_evaluated
    }

    pub fn members(&self, group: &Group) -> Result<Vec<&Order>, PoolError> {
        group
            .members()
            .iter()
            .map(|id| self.orders.get(id).ok_or(PoolError::Unknown(*id)))
            .collect()
    }

    pub fn best_group(&self, id: OrderId) -> Result<&BestGroupEntry, PoolError> {
        self.best.get(&id).ok_or(PoolError::Unknown(id))
    }

    /// Adds a pending order, links it to every shareable neighbor and stores
    /// the feasible cliques it completes.
    pub fn insert_order(&mut self, order: Order, t: Millis) -> Result<(), PoolError> {
        let id = order.id;
        if self.orders.contains_key(&id) {
            return Err(PoolError::Duplicate(id));
        }
        let candidates: Vec<OrderId> = match &self.prefilter {
            Some(p) => {
                let mut ids: Vec<OrderId> =
                    p.grid.ring_neighbors(&order.pickup, p.ring).map(|e| OrderId(e as u32)).collect();
                ids.sort_unstable();
                ids
            }
            None => self.orders.keys().copied().collect(),
        };
        let ctx = PlanContext {
            model: self.model,
            t_now: t,
            worker_origin: None,
            capacity: self.config.capacity,
            max_group: 2,
        };
        let mut links = BTreeMap::new();
        for j in candidates {
            let other = &self.orders[&j];
            if let Some(tau) = routing::latest_feasible_expiry(&[&order, other], &ctx)? {
                links.insert(j, tau);
            }
        }
        self.plans_evaluated += links.len() as u64;
        for (&j, &tau) in &links {
            self.adj.get_mut(&j).expect("neighbor is pending").insert(id, tau);
            let (a, b) = if id < j { (id, j) } else { (j, id) };
            self.edge_heap.push(Reverse((tau, a, b)));
        }
        if let Some(p) = &mut self.prefilter {
            p.grid.insert(id.0 as usize, &order.pickup);
        }
        self.adj.insert(id, links);
        self.orders.insert(id, order);
        self.ranked.insert(id, BTreeSet::new());
        self.best.insert(id, BestGroupEntry::empty(t));
        let mut touched = BTreeSet::new();
        for g in self.enumerate_cliques_containing(id, self.config.max_group)? {
            self.plans_evaluated += 1;
            if let Some(ev) = self.evaluate(&g, t)? {
                self.add_clique(ev, &mut touched);
            }
        }
        touched.insert(id);
        self.refresh(touched, t);
        Ok(())
    }

    /// Departure drops the members together with every clique that holds
    /// one of them. Expiration re-plans `group` from `t` on, dropping it when
    /// no feasible route is left.
    pub fn remove_orders(&mut self, group: &Group, cause: RemovalCause, t: Millis) -> Result<Vec<Order>, PoolError> {
        for id in group.members() {
            if !self.orders.contains_key(id) {
                return Err(PoolError::Unknown(*id));
            }
        }
        let mut touched = BTreeSet::new();
        match cause {
            RemovalCause::Departure => {
                let mut removed = Vec::with_capacity(group.len());
                for &id in group.members() {
                    let held: Vec<Group> = self.ranked[&id].iter().map(|r| r.group.clone()).collect();
                    for g in held {
                        self.drop_clique(&g, &mut touched);
                    }
                    removed.push(self.detach(id));
                }
                self.refresh(touched, t);
                Ok(removed)
            }
            RemovalCause::Expiration => {
                self.replan(group, t, &mut touched)?;
                self.refresh(touched, t);
                Ok(Vec::new())
            }
        }
    }

    /// Drops edges that expire by `t` and re-plans every clique whose route
    /// has expired.
    pub fn expire(&mut self, t: Millis) -> Result<(), PoolError> {
        while let Some(&Reverse((tau, a, b))) = self.edge_heap.peek() {
            if tau > t {
                break;
            }
            self.edge_heap.pop();
            if self.edge_expiry(a, b) != Some(tau) {
                continue;
            }
            self.adj.get_mut(&a).map(|n| n.remove(&b));
            self.adj.get_mut(&b).map(|n| n.remove(&a));
        }
        let mut touched = BTreeSet::new();
        while let Some(Reverse((at, _))) = self.clique_heap.peek() {
            if *at > t {
                break;
            }
            let Reverse((at, g)) = self.clique_heap.pop().expect("peeked");
            if self.cliques.get(&g).map(|c| c.0.expiry) == Some(at) {
                self.replan(&g, t, &mut touched)?;
            }
        }
        self.refresh(touched, t);
        Ok(())
    }

    /// Every clique of at most `k_max` pending orders that contains `id`,
    /// singleton first, then by size and member ids.
    pub fn enumerate_cliques_containing(&self, id: OrderId, k_max: usize) -> Result<Vec<Group>, PoolError> {
        if !self.orders.contains_key(&id) {
            return Err(PoolError::Unknown(id));
        }
        let neighbors: Vec<OrderId> = self.neighbors(id).collect();
        let mut out = Vec::new();
        let mut current = vec![id];
        if k_max >= 1 {
            self.extend_cliques(&mut current, &neighbors, k_max, &mut out);
        }
        out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.members().cmp(b.members())));
        Ok(out)
    }

    fn extend_cliques(&self, current: &mut Vec<OrderId>, candidates: &[OrderId], k_max: usize, out: &mut Vec<Group>) {
        out.push(Group::new(current.iter().copied()));
        if current.len() == k_max {
            return;
        }
        for (i, &c) in candidates.iter().enumerate() {
            let adj = &self.adj[&c];
            let rest: Vec<OrderId> = candidates[i + 1..].iter().copied().filter(|x| adj.contains_key(x)).collect();
            current.push(c);
            self.extend_cliques(current, &rest, k_max, out);
            current.pop();
        }
    }

    /// Cheapest feasible route of `group` at `t` and its score.
    pub fn evaluate(&self, group: &Group, t: Millis) -> Result<Option<Evaluated>, PoolError> {
        let members = self.members(group)?;
        if members.iter().map(|o| o.riders).sum::<u32>() > self.config.capacity {
            return Ok(None);
        }
        let ctx = PlanContext {
            model: self.model,
            t_now: t,
            worker_origin: None,
            capacity: self.config.capacity,
            max_group: self.config.max_group,
        };
        Ok(routing::plan_best_route(&members, &ctx)?.map(|route| {
            let score = routing::group_score(&members, &route, self.config.weights);
            Evaluated { group: group.clone(), route, score }
        }))
    }

    fn add_clique(&mut self, ev: Evaluated, touched: &mut BTreeSet<OrderId>) {
        for &m in ev.group.members() {
            self.ranked.get_mut(&m).expect("member is pending").insert(Ranked { score: ev.score, group: ev.group.clone() });
            touched.insert(m);
        }
        self.clique_heap.push(Reverse((ev.route.expiry, ev.group.clone())));
        self.cliques.insert(ev.group, (ev.route, ev.score));
    }

    fn drop_clique(&mut self, group: &Group, touched: &mut BTreeSet<OrderId>) {
        if let Some((_, score)) = self.cliques.remove(group) {
            let key = Ranked { score, group: group.clone() };
            for m in group.members() {
                if let Some(set) = self.ranked.get_mut(m) {
                    set.remove(&key);
                }
                touched.insert(*m);
            }
        }
    }

    fn replan(&mut self, group: &Group, t: Millis, touched: &mut BTreeSet<OrderId>) -> Result<(), PoolError> {
        if !self.cliques.contains_key(group) {
            return Ok(());
        }
        self.drop_clique(group, touched);
        self.plans_evaluated += 1;
        if let Some(ev) = self.evaluate(group, t)? {
            self.add_clique(ev, touched);
        }
        Ok(())
    }

    /// Re-reads the best group of each touched order from its ranking.
    fn refresh(&mut self, touched: BTreeSet<OrderId>, t: Millis) {
        for id in touched {
            let Some(set) = self.ranked.get(&id) else { continue };
            let head = set.first();
            let current = &self.best[&id];
            let unchanged = match (head, &current.group) {
                (None, None) => true,
                (Some(h), Some(g)) => h.group == *g && h.score.to_bits() == current.score.to_bits(),
                _ => false,
            };
            if unchanged {
                continue;
            }
            let entry = match head {
                None => BestGroupEntry::empty(t),
                Some(h) => {
                    let (route, score) = &self.cliques[&h.group];
                    BestGroupEntry {
                        group: Some(h.group.clone()),
                        route: Some(route.clone()),
                        avg_extra: score + self.config.weights.beta * t as f64,
                        score: *score,
                        refreshed_at: t,
                        expiry: route.expiry,
                    }
                }
            };
            self.best.insert(id, entry);
        }
    }

    fn detach(&mut self, id: OrderId) -> Order {
        if let Some(links) = self.adj.remove(&id) {
            for j in links.keys() {
                self.adj.get_mut(j).map(|n| n.remove(&id));
            }
        }
        self.ranked.remove(&id);
        self.best.remove(&id);
        if let Some(p) = &mut self.prefilter {
            p.grid.remove(id.0 as usize);
        }
        self.orders.remove(&id).expect("checked by caller")
    }

    /// Snapshot of nodes, edges and best groups for debugging and tests.
    pub fn dump(&self) -> GraphDump {
        let mut edges = Vec::new();
        for (&a, links) in &self.adj {
            for (&b, &tau) in links {
                if a < b {
                    edges.push((a, b, tau));
                }
            }
        }
        let best = self
            .best
            .iter()
            .map(|(&id, e)| {
                let entry = DumpEntry {
                    group: e.group.as_ref().map(|g| g.members().to_vec()),
                    avg_extra_ms: e.group.as_ref().map(|_| e.avg_extra),
                    expiry_ms: e.group.as_ref().map(|_| e.expiry),
                };
                (id, entry)
            })
            .collect();
        GraphDump { nodes: self.orders.keys().copied().collect(), edges, best }
    }

    pub fn dump_json(&self) -> String {
        serde_json::to_string_pretty(&self.dump()).expect("dump serializes")
    }
}
