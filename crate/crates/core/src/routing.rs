//! Minimum-cost feasible routes for candidate groups.
//!
//! The search walks every pickup/dropoff interleaving depth-first, trying the
//! next stop in ascending (order id, pickup-before-dropoff) order and pruning
//! any prefix that already costs at least the best complete route. Groups are
//! capped at a handful of orders, so the exhaustive search stays small and the
//! first minimum found is also the lexicographically smallest stop sequence.

use thiserror::Error;

use crate::domain::{ExtraTimeWeights, MemberLeg, Order, RoutePlan, Stop, StopKind};
use crate::spatial::{Location, SpatialError, TravelModel};
use crate::time::Millis;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoutingError {
    #[error("cannot route an empty group")]
    EmptyGroup,
    #[error("group of {size} orders exceeds the cap of {cap}")]
    GroupTooLarge { size: usize, cap: usize },
    #[error(transparent)]
    Spatial(#[from] SpatialError),
}

/// Deadline and capacity context for route planning.
#[derive(Debug, Clone, Copy)]
pub struct PlanContext<'a> {
    pub model: &'a TravelModel,
    pub t_now: Millis,
    /// When set, travel from here to the first stop counts against deadlines.
    pub worker_origin: Option<&'a Location>,
    pub capacity: u32,
    /// Largest group the planner accepts.
    pub max_group: usize,
}

/// Cheapest feasible route for `members`, or `None` when no interleaving meets
/// every deadline and the capacity.
pub fn plan_best_route(members: &[&Order], ctx: &PlanContext<'_>) -> Result<Option<RoutePlan>, RoutingError> {
    let search = Search::new(members, ctx)?;
    Ok(search.best().map(|(seq, _)| search.build_plan(&seq)))
}

/// Latest instant at which some interleaving of the orders is still feasible,
/// or `None` if none is feasible now. Used as the lifetime of a shareability
/// edge: the pair can be served together exactly while `t < result`.
pub fn latest_feasible_expiry(members: &[&Order], ctx: &PlanContext<'_>) -> Result<Option<Millis>, RoutingError> {
    let search = Search::new(members, ctx)?;
    let mut latest: Option<Millis> = None;
    search.walk(false, &mut |_, _, expiry| {
        latest = Some(latest.map_or(expiry, |l| l.max(expiry)));
    });
    Ok(latest)
}

/// Absolute instant at which `route` stops meeting some member's deadline.
/// The remaining slack is `group_expiry - t_now`; the route is expired once
/// `t_now >= group_expiry`.
pub fn group_expiry(members: &[&Order], route: &RoutePlan) -> Millis {
    members
        .iter()
        .map(|o| {
            let leg = route.leg(o.id).expect("route covers every member");
            o.deadline - route.approach - leg.sub_cost
        })
        .min()
        .expect("non-empty group")
}

/// Time-independent part of the average extra time:
/// `avg_extra(t) = group_score + beta * t`.
pub fn group_score(members: &[&Order], route: &RoutePlan, weights: ExtraTimeWeights) -> f64 {
    let detours: Millis = route.legs.iter().map(|l| l.detour).sum();
    let releases: Millis = members.iter().map(|o| o.release).sum();
    (weights.alpha * detours as f64 - weights.beta * releases as f64) / members.len() as f64
}

/// Mean extra time of the members if the group were dispatched at `t_now` (ms).
pub fn average_extra_time(members: &[&Order], route: &RoutePlan, t_now: Millis, weights: ExtraTimeWeights) -> f64 {
    let total: f64 = members
        .iter()
        .map(|o| {
            let leg = route.leg(o.id).expect("route covers every member");
            weights.weigh(leg.detour, t_now - o.release)
        })
        .sum();
    total / members.len() as f64
}

struct Search<'a> {
    members: Vec<&'a Order>,
    ctx: PlanContext<'a>,
    /// Stop 2k is member k's pickup, 2k+1 its dropoff, 2n the worker origin.
    locs: Vec<Location>,
    cost: Vec<Millis>,
    dim: usize,
}

#[derive(Clone, Copy)]
struct Walk {
    picked: u32,
    dropped: u32,
    load: u32,
    at: usize,
    partial: Millis,
    approach: Millis,
    expiry: Millis,
}

impl<'a> Search<'a> {
    fn new(members: &[&'a Order], ctx: &PlanContext<'a>) -> Result<Self, RoutingError> {
        if members.is_empty() {
            return Err(RoutingError::EmptyGroup);
        }
        if members.len() > ctx.max_group || members.len() > 16 {
            return Err(RoutingError::GroupTooLarge { size: members.len(), cap: ctx.max_group });
        }
        let mut sorted = members.to_vec();
        sorted.sort_by_key(|o| o.id);
        let mut locs: Vec<Location> = sorted.iter().flat_map(|o| [o.pickup, o.dropoff]).collect();
        if let Some(origin) = ctx.worker_origin {
            locs.push(*origin);
        }
        let dim = locs.len();
        let mut cost = vec![0; dim * dim];
        for i in 0..dim {
            for j in (i + 1)..dim {
                let c = ctx.model.travel_cost(&locs[i], &locs[j])?;
                cost[i * dim + j] = c;
                cost[j * dim + i] = c;
            }
        }
        Ok(Search { members: sorted, ctx: *ctx, locs, cost, dim })
    }

    fn c(&self, a: usize, b: usize) -> Millis {
        self.cost[a * self.dim + b]
    }

    fn best(&self) -> Option<(Vec<u8>, Millis)> {
        let mut best: Option<(Vec<u8>, Millis)> = None;
        let mut bound = Millis::MAX;
        self.walk_bounded(&mut bound, &mut |seq, total, _| {
            best = Some((seq.to_vec(), total));
        });
        best
    }

    fn walk(&self, prune: bool, visit: &mut dyn FnMut(&[u8], Millis, Millis)) {
        let mut bound = Millis::MAX;
        if prune {
            self.walk_bounded(&mut bound, visit);
        } else {
            let mut path = Vec::with_capacity(2 * self.members.len());
            self.dfs(self.start(), &mut path, &mut bound, false, visit);
        }
    }

    fn walk_bounded(&self, bound: &mut Millis, visit: &mut dyn FnMut(&[u8], Millis, Millis)) {
        let mut path = Vec::with_capacity(2 * self.members.len());
        self.dfs(self.start(), &mut path, bound, true, visit);
    }

    fn start(&self) -> Walk {
        Walk { picked: 0, dropped: 0, load: 0, at: usize::MAX, partial: 0, approach: 0, expiry: Millis::MAX }
    }

    fn dfs(
        &self,
        w: Walk,
        path: &mut Vec<u8>,
        bound: &mut Millis,
        prune: bool,
        visit: &mut dyn FnMut(&[u8], Millis, Millis),
    ) {
        let n = self.members.len();
        if path.len() == 2 * n {
            if !prune || w.partial < *bound {
                if prune {
                    *bound = w.partial;
                }
                visit(path, w.partial, w.expiry);
            }
            return;
        }
        for k in 0..n {
            let bit = 1u32 << k;
            let stop = if w.picked & bit == 0 {
                2 * k
            } else if w.dropped & bit == 0 {
                2 * k + 1
            } else {
                continue;
            };
            let mut next = w;
            if w.at == usize::MAX {
                if self.ctx.worker_origin.is_some() {
                    next.approach = self.c(2 * n, stop);
                }
            } else {
                next.partial += self.c(w.at, stop);
            }
            if prune && next.partial >= *bound {
                continue;
            }
            let order = self.members[k];
            if stop % 2 == 0 {
                next.picked |= bit;
                next.load += order.riders;
                if next.load > self.ctx.capacity {
                    continue;
                }
            } else {
                next.dropped |= bit;
                next.load -= order.riders;
                // strict deadline: t_now + approach + T(L^(i)) < deadline
                let slack_end = order.deadline - next.approach - next.partial;
                if self.ctx.t_now >= slack_end {
                    continue;
                }
                next.expiry = next.expiry.min(slack_end);
            }
            next.at = stop;
            path.push(stop as u8);
            self.dfs(next, path, bound, prune, visit);
            path.pop();
        }
    }

    fn build_plan(&self, seq: &[u8]) -> RoutePlan {
        let n = self.members.len();
        let first = seq[0] as usize;
        let approach = match self.ctx.worker_origin {
            Some(_) => self.c(2 * n, first),
            None => 0,
        };
        let mut stops = Vec::with_capacity(seq.len());
        let mut locations = Vec::with_capacity(seq.len());
        let mut legs = vec![None; n];
        let mut partial = 0;
        let mut load = 0;
        let mut peak_load = 0;
        let mut prev: Option<usize> = None;
        for &s in seq {
            let s = s as usize;
            if let Some(p) = prev {
                partial += self.c(p, s);
            }
            prev = Some(s);
            let k = s / 2;
            let order = self.members[k];
            let kind = if s % 2 == 0 { StopKind::Pickup } else { StopKind::Dropoff };
            stops.push(Stop { order: order.id, kind });
            locations.push(self.locs[s]);
            match kind {
                StopKind::Pickup => {
                    load += order.riders;
                    peak_load = peak_load.max(load);
                }
                StopKind::Dropoff => {
                    load -= order.riders;
                    legs[k] = Some(MemberLeg { order: order.id, sub_cost: partial, detour: partial - order.direct_cost });
                }
            }
        }
        let legs: Vec<MemberLeg> = legs.into_iter().map(|l| l.expect("every member dropped off")).collect();
        let expiry = self
            .members
            .iter()
            .zip(&legs)
            .map(|(o, l)| o.deadline - approach - l.sub_cost)
            .min()
            .expect("non-empty group");
        RoutePlan { stops, locations, total: partial, legs, approach, expiry, peak_load }
    }
}
