//! Fleet generation and worker assignment.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{Availability, Order, RoutePlan, Worker, WorkerId};
use crate::routing::{plan_best_route, PlanContext};
use crate::spatial::{nearest_worker_where, GridIndex, TravelModel};
use crate::time::Millis;

use super::SimError;

/// `m` workers parked at pickup locations drawn with replacement from
/// `orders`, with capacities uniform in `[2, max_capacity]`.
pub fn generate_workers(orders: &[Order], m: usize, max_capacity: u32, seed: u64) -> Result<Vec<Worker>, SimError> {
    if m == 0 {
        return Ok(Vec::new());
    }
    if orders.is_empty() {
        return Err(SimError::Input("cannot place workers without orders".into()));
    }
    if max_capacity < 2 {
        return Err(SimError::Input(format!("max capacity {max_capacity} is below 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..m)
        .map(|i| {
            let loc = orders.choose(&mut rng).expect("non-empty").pickup;
            Worker::new(WorkerId(i as u32), loc, rng.gen_range(2..=max_capacity))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub worker: WorkerId,
    /// Travel from the worker's position to the route's first stop.
    pub approach: Millis,
    /// Route actually driven; re-planned from the worker when approach
    /// time counts toward deadlines.
    pub route: RoutePlan,
    pub busy_until: Millis,
}

/// Picks the nearest idle worker with room for every rider of `members`.
/// With `include_approach` the route is re-planned from that worker and the
/// assignment fails if no interleaving still meets every deadline. Does not
/// modify `workers`.
pub fn assign_worker(
    members: &[&Order],
    route: &RoutePlan,
    workers: &[Worker],
    index: Option<&GridIndex>,
    t_now: Millis,
    model: &TravelModel,
    include_approach: bool,
) -> Result<Option<Assignment>, SimError> {
    let riders: u32 = members.iter().map(|o| o.riders).sum();
    let Some((wid, approach)) =
        nearest_worker_where(model, index, route.first_location(), workers, |w| w.capacity >= riders)
    else {
        return Ok(None);
    };
    let worker = &workers[wid.0 as usize];
    let route = if include_approach {
        let ctx = PlanContext {
            model,
            t_now,
            worker_origin: Some(&worker.location),
            capacity: worker.capacity,
            max_group: members.len(),
        };
        match plan_best_route(members, &ctx)? {
            Some(r) => r,
            None => return Ok(None),
        }
    } else {
        route.clone()
    };
    let approach = if include_approach { route.approach } else { approach };
    Ok(Some(Assignment { worker: wid, approach, busy_until: t_now + approach + route.total, route }))
}

/// Marks the worker busy until its route ends at the last stop.
pub fn occupy(workers: &mut [Worker], a: &Assignment) {
    let w = &mut workers[a.worker.0 as usize];
    w.availability = Availability::Busy { free_at: a.busy_until, free_loc: *a.route.last_location() };
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::OrderId;
    use crate::routing::plan_best_route;
    use crate::spatial::{BoundingBox, Location};

    fn order(id: u32, p: Location, d: Location, model: &TravelModel) -> Order {
        let c = model.travel_cost(&p, &d).unwrap();
        Order::new(OrderId(id), p, d, 1, 0, 10 * c + 1_000_000, c, c).unwrap()
    }

    #[test]
    fn degenerate_fleets() {
        let model = TravelModel::geodesic(10.0).unwrap();
        let o = order(0, Location::geo(0.0, 0.0), Location::geo(0.01, 0.0), &model);
        assert!(generate_workers(&[], 0, 3, 1).unwrap().is_empty());
        assert!(generate_workers(&[], 2, 3, 1).is_err());
        let ws = generate_workers(&[o.clone()], 50, 2, 1).unwrap();
        assert!(ws.iter().all(|w| w.capacity == 2 && w.location == o.pickup && w.is_idle()));
        assert_eq!(generate_workers(&[o.clone()], 50, 4, 9).unwrap(), generate_workers(&[o], 50, 4, 9).unwrap());
    }

    #[test]
    fn colocated_and_busy_workers() {
        let model = TravelModel::geodesic(10.0).unwrap();
        let o = order(0, Location::geo(0.0, 0.0), Location::geo(0.01, 0.0), &model);
        let ctx = PlanContext { model: &model, t_now: 0, worker_origin: None, capacity: 3, max_group: 3 };
        let route = plan_best_route(&[&o], &ctx).unwrap().unwrap();
        let mut workers = vec![
            Worker::new(WorkerId(0), Location::geo(0.02, 0.0), 3),
            Worker::new(WorkerId(1), Location::geo(0.0, 0.0), 3),
        ];
        let a = assign_worker(&[&o], &route, &workers, None, 0, &model, false).unwrap().unwrap();
        assert_eq!((a.worker, a.approach), (WorkerId(1), 0));
        assert_eq!(a.busy_until, route.total);
        occupy(&mut workers, &a);
        let b = assign_worker(&[&o], &route, &workers, None, 0, &model, true).unwrap().unwrap();
        assert_eq!(b.worker, WorkerId(0));
        assert!(b.approach > 0 && b.busy_until == b.approach + b.route.total);
        occupy(&mut workers, &b);
        assert!(assign_worker(&[&o], &route, &workers, None, 0, &model, false).unwrap().is_none());
    }

    #[test]
    fn approach_can_break_deadlines() {
        let model = TravelModel::geodesic(10.0).unwrap();
        let p = Location::geo(0.0, 0.0);
        let d = Location::geo(0.01, 0.0);
        let c = model.travel_cost(&p, &d).unwrap();
        let o = Order::new(OrderId(0), p, d, 1, 0, c + 5_000, 0, c).unwrap();
        let ctx = PlanContext { model: &model, t_now: 0, worker_origin: None, capacity: 3, max_group: 3 };
        let route = plan_best_route(&[&o], &ctx).unwrap().unwrap();
        let workers = vec![Worker::new(WorkerId(0), Location::geo(0.0, 0.01), 3)];
        assert!(assign_worker(&[&o], &route, &workers, None, 0, &model, false).unwrap().is_some());
        assert!(assign_worker(&[&o], &route, &workers, None, 0, &model, true).unwrap().is_none());
    }

    #[test]
    fn matches_linear_scan_oracle() {
        let model = TravelModel::geodesic(10.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bbox = BoundingBox::new(0.0, 0.0, 0.1, 0.1);
        for _ in 0..50 {
            let orders: Vec<Order> = (0..2)
                .map(|i| {
                    let p = Location::geo(rng.gen_range(0.0..0.1), rng.gen_range(0.0..0.1));
                    let d = Location::geo(rng.gen_range(0.0..0.1), rng.gen_range(0.0..0.1));
                    order(i, p, d, &model)
                })
                .collect();
            let refs: Vec<&Order> = orders.iter().collect();
            let ctx = PlanContext { model: &model, t_now: 0, worker_origin: None, capacity: 3, max_group: 3 };
            let Some(route) = plan_best_route(&refs, &ctx).unwrap() else { continue };
            let mut index = GridIndex::new(bbox, 10);
            let workers: Vec<Worker> = (0..40)
                .map(|i| {
                    let mut w = Worker::new(
                        WorkerId(i),
                        Location::geo(rng.gen_range(-0.01..0.11), rng.gen_range(-0.01..0.11)),
                        rng.gen_range(1..=3),
                    );
                    if rng.gen_bool(0.3) {
                        w.availability = Availability::Busy { free_at: 1, free_loc: w.location };
                    } else {
                        index.insert(i as usize, &w.location);
                    }
                    w
                })
                .collect();
            let oracle = workers
                .iter()
                .filter(|w| w.is_idle() && w.capacity >= 2)
                .map(|w| (model.travel_cost(&w.location, route.first_location()).unwrap(), w.id))
                .min();
            let got = assign_worker(&refs, &route, &workers, Some(&index), 0, &model, false).unwrap();
            assert_eq!(got.map(|a| (a.approach, a.worker)), oracle);
        }
    }
}
