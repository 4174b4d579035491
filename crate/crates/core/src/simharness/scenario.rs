//! Small graph scenarios, and a fleet evaluator for fixed groupings.
//!
//! [`evaluate_plan`] takes a list of jobs (groups with the time they become
//! ready) and hands each job, in order, to the worker that can reach its
//! first stop earliest. A worker's travel counts from its first pickup on,
//! including repositioning between consecutive jobs.

use std::io::BufRead;

use serde::Deserialize;

use crate::domain::{Group, Order, OrderId, Worker, WorkerId};
use crate::routing::{plan_best_route, PlanContext};
use crate::spatial::{Location, RoadGraph, TravelModel};
use crate::time::{secs_to_ms, Millis};

use super::SimError;

const EXAMPLE_GRAPH: &str = include_str!("../../data/example1/graph.txt");
const EXAMPLE_ORDERS: &str = include_str!("../../data/example1/orders.csv");
const EXAMPLE_WORKERS: &str = include_str!("../../data/example1/workers.csv");

/// Orders and workers on a road graph.
#[derive(Debug, Clone)]
pub struct GraphScenario {
    pub model: TravelModel,
    pub orders: Vec<Order>,
    pub workers: Vec<Worker>,
}

#[derive(Deserialize)]
struct NodeOrderRow {
    order_id: u32,
    release_s: f64,
    pickup_node: u32,
    dropoff_node: u32,
    riders: u32,
    deadline_s: f64,
    wait_s: f64,
}

#[derive(Deserialize)]
struct NodeWorkerRow {
    worker_id: u32,
    node: u32,
    capacity: u32,
}

impl GraphScenario {
    /// Reads a graph file, an order CSV
    /// (`order_id,release_s,pickup_node,dropoff_node,riders,deadline_s,wait_s`) and
    /// a worker CSV (`worker_id,node,capacity`, ids `0..m`).
    pub fn load(graph: impl BufRead, orders: impl std::io::Read, workers: impl std::io::Read) -> Result<Self, SimError> {
        let model = TravelModel::Graph(RoadGraph::parse(graph)?);
        let mut os = Vec::new();
        for row in csv::Reader::from_reader(orders).deserialize::<NodeOrderRow>() {
            let r = row?;
            let (p, d) = (Location::Node(r.pickup_node), Location::Node(r.dropoff_node));
            let direct = model.travel_cost(&p, &d)?;
            os.push(Order::new(
                OrderId(r.order_id),
                p,
                d,
                r.riders,
                secs_to_ms(r.release_s),
                secs_to_ms(r.deadline_s),
                secs_to_ms(r.wait_s),
                direct,
            )?);
        }
        os.sort_by_key(|o| (o.release, o.id));
        let mut ws = Vec::new();
        for row in csv::Reader::from_reader(workers).deserialize::<NodeWorkerRow>() {
            let r = row?;
            ws.push(Worker::new(WorkerId(r.worker_id), Location::Node(r.node), r.capacity));
        }
        ws.sort_by_key(|w| w.id);
        if ws.iter().enumerate().any(|(i, w)| w.id.0 as usize != i) {
            return Err(SimError::Input("worker ids must be 0..m".into()));
        }
        Ok(GraphScenario { model, orders: os, workers: ws })
    }

    /// The four-order, two-worker example shipped in `data/example1`.
    pub fn example1() -> Self {
        GraphScenario::load(EXAMPLE_GRAPH.as_bytes(), EXAMPLE_ORDERS.as_bytes(), EXAMPLE_WORKERS.as_bytes())
            .expect("bundled scenario parses")
    }

    fn order(&self, id: OrderId) -> &Order {
        self.orders.iter().find(|o| o.id == id).expect("known order")
    }

    fn members(&self, g: &Group) -> Vec<&Order> {
        g.members().iter().map(|&id| self.order(id)).collect()
    }

    fn route_cost(&self, g: &Group, t: Millis) -> Result<Option<Millis>, SimError> {
        let cap = self.workers.iter().map(|w| w.capacity).max().unwrap_or(0);
        let ctx = PlanContext { model: &self.model, t_now: t, worker_origin: None, capacity: cap, max_group: cap as usize };
        Ok(plan_best_route(&self.members(g), &ctx)?.map(|r| r.total))
    }

    /// Partition of `ids` into groups of at most `max_group` orders with the
    /// least total route cost at time `t`. The first minimum in enumeration
    /// order wins.
    pub fn best_partition(&self, ids: &[OrderId], max_group: usize, t: Millis) -> Result<(Millis, Vec<Group>), SimError> {
        let mut best: Option<(Millis, Vec<Group>)> = None;
        let mut parts: Vec<Vec<OrderId>> = Vec::new();
        self.partitions(ids, 0, max_group, t, &mut parts, &mut best)?;
        best.ok_or_else(|| SimError::Input("no feasible partition".into()))
    }

    fn partitions(
        &self,
        ids: &[OrderId],
        i: usize,
        max_group: usize,
        t: Millis,
        parts: &mut Vec<Vec<OrderId>>,
        best: &mut Option<(Millis, Vec<Group>)>,
    ) -> Result<(), SimError> {
        if i == ids.len() {
            let mut total = 0;
            for p in parts.iter() {
                match self.route_cost(&Group::new(p.iter().copied()), t)? {
                    Some(c) => total += c,
                    None => return Ok(()),
                }
            }
            if best.as_ref().map_or(true, |b| total < b.0) {
                *best = Some((total, parts.iter().map(|p| Group::new(p.iter().copied())).collect()));
            }
            return Ok(());
        }
        for k in 0..parts.len() {
            if parts[k].len() < max_group {
                parts[k].push(ids[i]);
                self.partitions(ids, i + 1, max_group, t, parts, best)?;
                parts[k].pop();
            }
        }
        parts.push(vec![ids[i]]);
        self.partitions(ids, i + 1, max_group, t, parts, best)?;
        parts.pop();
        Ok(())
    }

    /// Total worker travel for `jobs` (ready time, group), handled in order.
    pub fn evaluate_plan(&self, jobs: &[(Millis, Group)]) -> Result<Millis, SimError> {
        let mut loc: Vec<Location> = self.workers.iter().map(|w| w.location).collect();
        let mut free: Vec<Millis> = vec![0; self.workers.len()];
        let mut started = vec![false; self.workers.len()];
        let mut total = 0;
        for (ready, g) in jobs {
            let members = self.members(g);
            let riders: u32 = members.iter().map(|o| o.riders).sum();
            let ctx = PlanContext {
                model: &self.model,
                t_now: *ready,
                worker_origin: None,
                capacity: riders,
                max_group: members.len(),
            };
            let route = plan_best_route(&members, &ctx)?
                .ok_or_else(|| SimError::Input(format!("group {g} has no feasible route at {ready} ms")))?;
            let mut pick: Option<(Millis, usize, Millis)> = None;
            for (i, w) in self.workers.iter().enumerate() {
                if w.capacity < riders {
                    continue;
                }
                let reach = self.model.travel_cost(&loc[i], route.first_location())?;
                let arrival = free[i].max(*ready) + reach;
                if pick.map_or(true, |p| arrival < p.0) {
                    pick = Some((arrival, i, reach));
                }
            }
            let (arrival, i, reach) = pick.ok_or_else(|| SimError::Input(format!("no worker fits group {g}")))?;
            if started[i] {
                total += reach;
            }
            started[i] = true;
            total += route.total;
            free[i] = arrival + route.total;
            loc[i] = *route.last_location();
        }
        Ok(total)
    }

    /// Every order alone, as soon as it is released.
    pub fn sequential_plan(&self) -> Vec<(Millis, Group)> {
        self.orders.iter().map(|o| (o.release, Group::singleton(o.id))).collect()
    }

    /// Orders grouped within fixed rounds `(k*w, (k+1)*w]`, each round
    /// dispatched at its end with its best partition.
    pub fn batch_plan(&self, window: Millis, max_group: usize) -> Result<Vec<(Millis, Group)>, SimError> {
        let mut rounds: Vec<(i64, Vec<OrderId>)> = Vec::new();
        for o in &self.orders {
            let round = (o.release + window - 1).div_euclid(window) - 1;
            match rounds.last_mut() {
                Some((r, ids)) if *r == round => ids.push(o.id),
                _ => rounds.push((round, vec![o.id])),
            }
        }
        let mut jobs = Vec::new();
        for (round, ids) in rounds {
            let at = (round + 1) * window;
            let (_, groups) = self.best_partition(&ids, max_group, at)?;
            let mut groups: Vec<Group> = groups;
            groups.sort();
            jobs.extend(groups.into_iter().map(|g| (at, g)));
        }
        Ok(jobs)
    }

    /// Best partition of the whole stream, each group ready once its last
    /// member has arrived.
    pub fn pooled_plan(&self, max_group: usize) -> Result<Vec<(Millis, Group)>, SimError> {
        let ids: Vec<OrderId> = self.orders.iter().map(|o| o.id).collect();
        let last = self.orders.iter().map(|o| o.release).max().unwrap_or(0);
        let (_, groups) = self.best_partition(&ids, max_group, last)?;
        let mut jobs: Vec<(Millis, Group)> = groups
            .into_iter()
            .map(|g| (g.members().iter().map(|&id| self.order(id).release).max().unwrap_or(0), g))
            .collect();
        jobs.sort();
        Ok(jobs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_one_totals() {
        let s = GraphScenario::example1();
        let min = 60_000;
        assert_eq!(s.evaluate_plan(&s.sequential_plan()).unwrap(), 12 * min);
        let batch = s.batch_plan(10_000, 2).unwrap();
        assert_eq!(
            batch,
            vec![
                (10_000, Group::new([OrderId(1), OrderId(3)])),
                (10_000, Group::singleton(OrderId(2))),
                (20_000, Group::singleton(OrderId(4)))
            ]
        );
        assert_eq!(s.evaluate_plan(&batch).unwrap(), 7 * min);
        let pooled = s.pooled_plan(2).unwrap();
        assert_eq!(
            pooled,
            vec![(10_000, Group::new([OrderId(1), OrderId(3)])), (12_000, Group::new([OrderId(2), OrderId(4)]))]
        );
        assert_eq!(s.evaluate_plan(&pooled).unwrap(), 5 * min);
    }
}
