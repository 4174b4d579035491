//! The pooling event loop.
//!
//! Orders are inserted into the shareability graph as they arrive. Every
//! `check_period` the pending orders are visited in id order. Each one whose
//! best group the policy wants to dispatch is handed, with its group, to the
//! nearest idle worker that fits. Orders that can no longer be served, or
//! that have outlived their watching window without a group or a worker, are
//! rejected.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use crate::domain::{Group, Order, OrderId, RejectedRecord, RoutePlan, ServedRecord, Worker};
use crate::poolgraph::{RemovalCause, ShareGraph};
use crate::routing::average_extra_time;
use crate::spatial::{BoundingBox, GridIndex, Location, TravelModel};
use crate::strategy::{
    make_decision, mean_threshold, theta_from_value, threshold_of, Decision, DecisionStrategy, DispatchCause,
    StrategyKind, ThresholdSource,
};
use crate::time::Millis;
use crate::valuelearn::{featurize, DemandSupply, EnvCache, EnvSnapshot, StateVector};

use super::config::SimConfig;
use super::eventlog::{EventKind, EventRow};
use super::metrics::{MetricsReport, Totals};
use super::workers::{assign_worker, generate_workers, occupy, Assignment};
use super::SimError;

/// What a policy sees when asked about one order's best group.
pub struct DecisionInput<'a> {
    pub t: Millis,
    pub pivot: &'a Order,
    pub members: &'a [&'a Order],
    pub route: &'a RoutePlan,
    /// Member states (aligned with `members`) when the policy wants them.
    pub states: Option<&'a [StateVector]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyChoice {
    pub decision: Decision,
    /// Mean member threshold the decision compared against, in ms.
    pub mean_theta_ms: Option<f64>,
}

/// How an order left the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    Dispatched { response: Millis, detour: Millis },
    Rejected,
}

/// Decides dispatches. The hooks let a learner observe each order's
/// trajectory; they are only called when [`Policy::wants_states`] is true.
pub trait Policy {
    fn decide(&mut self, input: &DecisionInput<'_>) -> Result<PolicyChoice, SimError>;

    fn wants_states(&self) -> bool {
        false
    }

    fn on_arrive(&mut self, _order: &Order) {}

    /// The order stays pooled after the check at `t`.
    fn on_wait(&mut self, _order: &Order, _t: Millis, _state: &StateVector) {}

    fn on_terminal(&mut self, _order: &Order, _t: Millis, _state: &StateVector, _end: Terminal) {}
}

/// A fixed decision rule with an optional threshold source.
pub struct StrategyPolicy {
    strategy: DecisionStrategy,
    source: Option<ThresholdSource>,
    env_cache: EnvCache,
    memo: BTreeMap<OrderId, (u64, u32, f64)>,
    /// Thresholds that depend on the order alone.
    fixed: BTreeMap<OrderId, f64>,
}

impl StrategyPolicy {
    pub fn new(strategy: DecisionStrategy, source: Option<ThresholdSource>) -> Result<Self, SimError> {
        if strategy.kind == StrategyKind::Threshold && source.is_none() {
            return Err(crate::strategy::StrategyError::NoSource.into());
        }
        Ok(StrategyPolicy { strategy, source, env_cache: EnvCache::default(), memo: BTreeMap::new(), fixed: BTreeMap::new() })
    }

    fn thresholds(&mut self, input: &DecisionInput<'_>) -> Result<Vec<Option<f64>>, SimError> {
        let source = self.source.as_ref().expect("checked in new");
        let mut out = Vec::with_capacity(input.members.len());
        for (k, o) in input.members.iter().enumerate() {
            let theta = match source {
                ThresholdSource::ValueNet(net) => {
                    let s = &input.states.ok_or(crate::strategy::StrategyError::NoState)?[k];
                    match self.memo.get(&o.id) {
                        Some(&(env, waited, theta)) if env == s.env.id && waited == s.waited_slots => theta,
                        _ => {
                            let theta = theta_from_value(o.penalty(), net.value_cached(s, &mut self.env_cache));
                            self.memo.insert(o.id, (s.env.id, s.waited_slots, theta));
                            theta
                        }
                    }
                }
                other => match self.fixed.get(&o.id) {
                    Some(&theta) => theta,
                    None => {
                        let theta = threshold_of(o, other, None)?;
                        self.fixed.insert(o.id, theta);
                        theta
                    }
                },
            };
            out.push(Some(theta));
        }
        Ok(out)
    }
}

impl Policy for StrategyPolicy {
    fn decide(&mut self, input: &DecisionInput<'_>) -> Result<PolicyChoice, SimError> {
        if self.strategy.kind != StrategyKind::Threshold {
            let decision = make_decision(&self.strategy, input.members, input.route, input.t, &[])?;
            return Ok(PolicyChoice { decision, mean_theta_ms: None });
        }
        let thetas = self.thresholds(input)?;
        let decision = make_decision(&self.strategy, input.members, input.route, input.t, &thetas)?;
        Ok(PolicyChoice { decision, mean_theta_ms: Some(mean_threshold(input.members, &thetas)?) })
    }

    fn wants_states(&self) -> bool {
        self.strategy.kind == StrategyKind::Threshold && matches!(self.source, Some(ThresholdSource::ValueNet(_)))
    }

    fn on_terminal(&mut self, order: &Order, _t: Millis, _state: &StateVector, _end: Terminal) {
        self.memo.remove(&order.id);
        self.fixed.remove(&order.id);
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub report: MetricsReport,
    pub events: Vec<EventRow>,
    pub served: Vec<ServedRecord>,
    pub rejected: Vec<RejectedRecord>,
}

/// Grid over `config.bbox`, or over every stop with a 1% margin. Graph
/// locations map to cells by node id, so any box works for them.
pub fn grid_for(orders: &[Order], config: &SimConfig) -> GridIndex {
    let bbox = config.bbox.unwrap_or_else(|| {
        let stops = orders.iter().flat_map(|o| [&o.pickup, &o.dropoff]);
        BoundingBox::around(stops, 0.01).unwrap_or(BoundingBox::new(0.0, 0.0, 1.0, 1.0))
    });
    GridIndex::new(bbox, config.grid_cells)
}

struct Engine<'a> {
    cfg: &'a SimConfig,
    model: &'a TravelModel,
    grid: &'a GridIndex,
    strategy_check: DecisionStrategy,
    pool: ShareGraph<'a>,
    workers: Vec<Worker>,
    idle: Option<GridIndex>,
    busy: BinaryHeap<Reverse<(Millis, u32)>>,
    demand: DemandSupply,
    env: Option<Arc<EnvSnapshot>>,
    wants_states: bool,
    slot: Millis,
    events: Vec<EventRow>,
    totals: Totals,
    next_group: u64,
}

/// Runs one simulation. `orders` must be sorted by release time with
/// distinct ids; `workers[i].id` must equal `i`.
pub fn run_simulation(
    orders: &[Order],
    workers: Vec<Worker>,
    model: &TravelModel,
    grid: &GridIndex,
    config: &SimConfig,
    policy: &mut dyn Policy,
) -> Result<SimOutcome, SimError> {
    config.validate()?;
    for (i, w) in orders.windows(2).enumerate() {
        if w[1].release < w[0].release {
            return Err(SimError::Unsorted { index: i + 1 });
        }
    }
    let mut ids: Vec<OrderId> = orders.iter().map(|o| o.id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(SimError::Input(format!("order id {} appears twice", w[0])));
    }
    for (i, w) in workers.iter().enumerate() {
        if w.id.0 as usize != i {
            return Err(SimError::Input(format!("worker at index {i} has id {}", w.id)));
        }
    }

    let mut pool = ShareGraph::new(model, config.pool_config());
    if let (Some(ring), true) = (config.prefilter_ring, model.is_geodesic()) {
        pool = pool.with_prefilter(GridIndex::new(grid.bbox(), grid.cells_per_side()), ring);
    }
    let mut idle = model.is_geodesic().then(|| GridIndex::new(grid.bbox(), grid.cells_per_side()));
    let mut demand = DemandSupply::new(grid.cell_count());
    let mut busy = BinaryHeap::new();
    for w in &workers {
        match w.availability {
            crate::domain::Availability::Idle => {
                if let Some(ix) = idle.as_mut() {
                    ix.insert(w.id.0 as usize, &w.location);
                }
                demand.add_idle(grid.cell_of(&w.location));
            }
            crate::domain::Availability::Busy { free_at, .. } => busy.push(Reverse((free_at, w.id.0))),
        }
    }
    let mut engine = Engine {
        cfg: config,
        model,
        grid,
        strategy_check: config.decision_strategy(),
        pool,
        workers,
        idle,
        busy,
        demand,
        env: None,
        wants_states: policy.wants_states(),
        slot: config.slot_ms(),
        events: Vec::with_capacity(orders.len() * 3),
        totals: Totals::default(),
        next_group: 0,
    };

    let period = config.check_period_ms();
    let first_tick = |r: Millis| (r + period - 1).div_euclid(period) * period;
    let mut next = 0;
    let mut tick = orders.first().map_or(0, |o| first_tick(o.release));
    loop {
        while next < orders.len() && orders[next].release <= tick {
            engine.arrive(&orders[next], policy)?;
            next += 1;
        }
        if engine.pool.is_empty() {
            if next == orders.len() {
                break;
            }
            tick = first_tick(orders[next].release);
            continue;
        }
        engine.check(tick, policy)?;
        tick += period;
    }

    let report = engine.totals.report()?;
    Ok(SimOutcome { report, events: engine.events, served: engine.totals.served, rejected: engine.totals.rejected })
}

/// Generates the fleet from `config`, builds the default grid and runs the
/// decision rule `config.strategy` with `source` as threshold source.
pub fn simulate(
    orders: &[Order],
    model: &TravelModel,
    config: &SimConfig,
    source: Option<ThresholdSource>,
) -> Result<SimOutcome, SimError> {
    let workers = generate_workers(orders, config.workers, config.max_capacity, config.seed)?;
    let grid = grid_for(orders, config);
    let mut policy = StrategyPolicy::new(config.decision_strategy(), source)?;
    run_simulation(orders, workers, model, &grid, config, &mut policy)
}

impl<'a> Engine<'a> {
    fn cells(&self, o: &Order) -> (usize, usize) {
        (self.grid.cell_of(&o.pickup), self.grid.cell_of(&o.dropoff))
    }

    fn snapshot(&mut self) -> Arc<EnvSnapshot> {
        if self.env.is_none() {
            self.env = Some(self.demand.snapshot());
        }
        Arc::clone(self.env.as_ref().expect("just set"))
    }

    fn state_of(&mut self, o: &Order, t: Millis) -> StateVector {
        let env = self.snapshot();
        featurize(o, t, self.grid, &env, self.slot)
    }

    fn release_workers(&mut self, t: Millis) {
        while let Some(&Reverse((free_at, id))) = self.busy.peek() {
            if free_at > t {
                break;
            }
            self.busy.pop();
            let w = &mut self.workers[id as usize];
            if w.release_if_done(t) {
                let loc: Location = w.location;
                if let Some(ix) = self.idle.as_mut() {
                    ix.insert(id as usize, &loc);
                }
                self.demand.add_idle(self.grid.cell_of(&loc));
                self.env = None;
            }
        }
    }

    fn arrive(&mut self, order: &Order, policy: &mut dyn Policy) -> Result<(), SimError> {
        let t = order.release;
        self.release_workers(t);
        self.pool.expire(t)?;
        let (p, d) = self.cells(order);
        self.demand.add_order(p, d);
        self.env = None;
        self.events.push(EventRow { order_id: Some(order.id.0), ..EventRow::new(t, EventKind::Arrive) });
        self.totals.orders += 1;
        policy.on_arrive(order);
        self.pool.insert_order(order.clone(), t)?;
        Ok(())
    }

    fn check(&mut self, t: Millis, policy: &mut dyn Policy) -> Result<(), SimError> {
        self.release_workers(t);
        self.pool.expire(t)?;
        for id in self.pool.pending_ids() {
            let Some(order) = self.pool.order(id).cloned() else { continue };
            if t > order.latest_response_at() {
                self.reject(&order, t, policy)?;
                continue;
            }
            let entry = self.pool.best_group(id)?;
            if let (Some(group), Some(route)) = (entry.group.clone(), entry.route.clone()) {
                if self.try_group(&order, &group, &route, t, policy)? {
                    continue;
                }
            }
            if t > order.timeout_at() {
                self.reject(&order, t, policy)?;
            } else if self.wants_states {
                let s = self.state_of(&order, t);
                policy.on_wait(&order, t, &s);
            }
        }
        Ok(())
    }

    /// Asks the policy about `group` and dispatches it if told to and a
    /// worker is available. Returns whether the group left the pool.
    fn try_group(
        &mut self,
        pivot: &Order,
        group: &Group,
        route: &RoutePlan,
        t: Millis,
        policy: &mut dyn Policy,
    ) -> Result<bool, SimError> {
        let members: Vec<Order> = self.pool.members(group)?.into_iter().cloned().collect();
        let refs: Vec<&Order> = members.iter().collect();
        let states: Option<Vec<StateVector>> =
            self.wants_states.then(|| members.iter().map(|o| self.state_of(o, t)).collect());
        let choice = policy.decide(&DecisionInput {
            t,
            pivot,
            members: &refs,
            route,
            states: states.as_deref(),
        })?;
        let Decision::Dispatch(cause) = choice.decision else { return Ok(false) };
        let Some(assignment) = assign_worker(
            &refs,
            route,
            &self.workers,
            self.idle.as_ref(),
            t,
            self.model,
            self.cfg.include_approach,
        )?
        else {
            return Ok(false);
        };
        if cause == DispatchCause::Threshold {
            // a re-planned route must still honor the bound it was accepted under
            let theta = choice.mean_theta_ms.expect("threshold decisions carry a mean threshold");
            if average_extra_time(&refs, &assignment.route, t, self.strategy_check.weights) > theta {
                return Ok(false);
            }
        }
        self.dispatch(&refs, states.as_deref(), group, &assignment, cause, choice.mean_theta_ms, t, policy)?;
        Ok(true)
    }

    #[allow(clippy::too_many_arguments)]
    fn dispatch(
        &mut self,
        members: &[&Order],
        states: Option<&[StateVector]>,
        group: &Group,
        a: &Assignment,
        cause: DispatchCause,
        theta: Option<f64>,
        t: Millis,
        policy: &mut dyn Policy,
    ) -> Result<(), SimError> {
        let gid = self.next_group;
        self.next_group += 1;
        let weights = self.strategy_check.weights;
        for leg in &a.route.legs {
            let k = members.iter().position(|o| o.id == leg.order).expect("route covers the group");
            let o = members[k];
            let response = t - o.release;
            let extra = weights.weigh(leg.detour, response);
            self.events.push(EventRow {
                order_id: Some(o.id.0),
                group_id: Some(gid),
                worker_id: Some(a.worker.0),
                t_r: Some(response),
                t_d: Some(leg.detour),
                t_e: Some(extra),
                theta_ms: theta,
                ..EventRow::new(t, EventKind::dispatch(cause))
            });
            self.totals.served.push(ServedRecord { order: o.id, worker: a.worker, response, detour: leg.detour, extra });
            match cause {
                DispatchCause::Online => self.totals.causes.online += 1,
                DispatchCause::Timeout => self.totals.causes.timeout += 1,
                DispatchCause::Threshold => self.totals.causes.threshold += 1,
            }
            if let Some(states) = states {
                policy.on_terminal(o, t, &states[k], Terminal::Dispatched { response, detour: leg.detour });
            }
        }
        let travel = a.approach + a.route.total;
        self.events.push(EventRow {
            group_id: Some(gid),
            worker_id: Some(a.worker.0),
            cost_ms: Some(travel),
            ..EventRow::new(t, EventKind::Assign)
        });
        self.totals.worker_travel += travel;
        self.totals.groups += 1;

        let wloc = self.workers[a.worker.0 as usize].location;
        occupy(&mut self.workers, a);
        self.busy.push(Reverse((a.busy_until, a.worker.0)));
        if let Some(ix) = self.idle.as_mut() {
            ix.remove(a.worker.0 as usize);
        }
        self.demand.remove_idle(self.grid.cell_of(&wloc));
        for o in members {
            let (p, d) = self.cells(o);
            self.demand.remove_order(p, d);
        }
        self.env = None;
        self.pool.remove_orders(group, RemovalCause::Departure, t)?;
        Ok(())
    }

    fn reject(&mut self, order: &Order, t: Millis, policy: &mut dyn Policy) -> Result<(), SimError> {
        let penalty = order.penalty();
        self.events.push(EventRow {
            order_id: Some(order.id.0),
            t_r: Some(t - order.release),
            t_e: Some(penalty as f64),
            cost_ms: Some(order.direct_cost),
            ..EventRow::new(t, EventKind::Reject)
        });
        self.totals.rejected.push(RejectedRecord { order: order.id, penalty });
        self.totals.rejected_direct.push(order.direct_cost);
        if self.wants_states {
            let s = self.state_of(order, t);
            policy.on_terminal(order, t, &s, Terminal::Rejected);
        }
        let (p, d) = self.cells(order);
        self.demand.remove_order(p, d);
        self.env = None;
        self.pool.remove_orders(&Group::singleton(order.id), RemovalCause::Departure, t)?;
        Ok(())
    }
}
