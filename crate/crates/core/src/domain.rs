//! Orders, workers, groups, routes, and the per-order time metrics.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spatial::Location;
use crate::time::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OrderId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WorkerId(pub u32);

impl fmt::Display for OrderId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "o{}", self.0)
    }
}

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("order {0}: deadline leaves no time to drive the trip")]
    DeadlineTooTight(OrderId),
    #[error("order {0}: rider count must be at least 1")]
    NoRiders(OrderId),
    #[error("order {0}: negative watching window")]
    NegativeWaitLimit(OrderId),
    #[error("negative duration: detour {detour} ms, response {response} ms")]
    NegativeDuration { detour: Millis, response: Millis },
    #[error("order {0} appears more than once in the outcome records")]
    DuplicateRecord(OrderId),
}

/// A ride request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Order {
    pub id: OrderId,
    pub pickup: Location,
    pub dropoff: Location,
    pub riders: u32,
    /// Release time.
    pub release: Millis,
    /// Latest drop-off time (exclusive).
    pub deadline: Millis,
    /// Watching window: how long the order prefers to wait before a response.
    pub wait_limit: Millis,
    /// Shortest travel cost from pickup to dropoff.
    pub direct_cost: Millis,
}

impl Order {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: OrderId,
        pickup: Location,
        dropoff: Location,
        riders: u32,
        release: Millis,
        deadline: Millis,
        wait_limit: Millis,
        direct_cost: Millis,
    ) -> Result<Self, DomainError> {
        if riders == 0 {
            return Err(DomainError::NoRiders(id));
        }
        if wait_limit < 0 {
            return Err(DomainError::NegativeWaitLimit(id));
        }
        if deadline <= release + direct_cost {
            return Err(DomainError::DeadlineTooTight(id));
        }
        Ok(Order { id, pickup, dropoff, riders, release, deadline, wait_limit, direct_cost })
    }

    /// Reject penalty, equal to the maximum response time.
    pub fn penalty(&self) -> Millis {
        max_response_time(self)
    }

    /// Instant the watching window closes.
    pub fn timeout_at(&self) -> Millis {
        self.release + self.wait_limit
    }

    /// Last instant at which a direct trip still meets the deadline.
    pub fn latest_response_at(&self) -> Millis {
        self.release + self.penalty()
    }

    pub fn response_time(&self, now: Millis) -> Millis {
        now - self.release
    }
}

/// `deadline - release - direct_cost`: waiting any longer makes the deadline
/// unreachable even on the direct route.
pub fn max_response_time(order: &Order) -> Millis {
    order.deadline - order.release - order.direct_cost
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Availability {
    Idle,
    Busy { free_at: Millis, free_loc: Location },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Worker {
    pub id: WorkerId,
    pub location: Location,
    pub capacity: u32,
    pub availability: Availability,
}

impl Worker {
    pub fn new(id: WorkerId, location: Location, capacity: u32) -> Self {
        Worker { id, location, capacity, availability: Availability::Idle }
    }

    pub fn is_idle(&self) -> bool {
        matches!(self.availability, Availability::Idle)
    }

    /// Frees a busy worker whose trip ends at or before `now`, moving it to the
    /// trip's last stop. Returns true when the worker changed state.
    pub fn release_if_done(&mut self, now: Millis) -> bool {
        if let Availability::Busy { free_at, free_loc } = self.availability {
            if free_at <= now {
                self.location = free_loc;
                self.availability = Availability::Idle;
                return true;
            }
        }
        false
    }
}

/// A set of orders served together, kept sorted by id.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Group(Vec<OrderId>);

impl Group {
    pub fn new(members: impl IntoIterator<Item = OrderId>) -> Self {
        let set: BTreeSet<OrderId> = members.into_iter().collect();
        Group(set.into_iter().collect())
    }

    pub fn singleton(id: OrderId) -> Self {
        Group(vec![id])
    }

    pub fn members(&self) -> &[OrderId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, id: OrderId) -> bool {
        self.0.binary_search(&id).is_ok()
    }

    pub fn contains_all(&self, other: &Group) -> bool {
        other.0.iter().all(|&id| self.contains(id))
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ids: Vec<String> = self.0.iter().map(|o| o.0.to_string()).collect();
        write!(f, "{{{}}}", ids.join(","))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StopKind {
    Pickup,
    Dropoff,
}

/// One stop of a route. Ordering is the tie-break order for equal-cost routes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Stop {
    pub order: OrderId,
    pub kind: StopKind,
}

/// Per-member figures of a planned route.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberLeg {
    pub order: OrderId,
    /// Cost from the first stop through this order's pickup to its dropoff.
    pub sub_cost: Millis,
    /// `sub_cost - direct_cost`.
    pub detour: Millis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutePlan {
    pub stops: Vec<Stop>,
    pub locations: Vec<Location>,
    /// Travel cost of the whole stop sequence.
    pub total: Millis,
    /// Legs in ascending order id.
    pub legs: Vec<MemberLeg>,
    /// Worker travel to the first stop counted in the deadline check.
    pub approach: Millis,
    /// Absolute instant at which the route stops meeting every deadline.
    pub expiry: Millis,
    /// Most riders on board at once.
    pub peak_load: u32,
}

impl RoutePlan {
    pub fn leg(&self, order: OrderId) -> Option<&MemberLeg> {
        self.legs.iter().find(|l| l.order == order)
    }

    pub fn first_location(&self) -> &Location {
        &self.locations[0]
    }

    pub fn last_location(&self) -> &Location {
        self.locations.last().expect("routes have at least two stops")
    }
}

/// Trade-off weights for detour (alpha) and response (beta) time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtraTimeWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for ExtraTimeWeights {
    fn default() -> Self {
        ExtraTimeWeights { alpha: 1.0, beta: 1.0 }
    }
}

impl ExtraTimeWeights {
    /// `alpha * detour + beta * response`, assuming validated inputs.
    pub fn weigh(&self, detour: Millis, response: Millis) -> f64 {
        self.alpha * detour as f64 + self.beta * response as f64
    }
}

/// Extra time of one order in milliseconds.
pub fn extra_time(detour: Millis, response: Millis, weights: ExtraTimeWeights) -> Result<f64, DomainError> {
    if detour < 0 || response < 0 {
        return Err(DomainError::NegativeDuration { detour, response });
    }
    Ok(weights.weigh(detour, response))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServedRecord {
    pub order: OrderId,
    pub worker: WorkerId,
    pub response: Millis,
    pub detour: Millis,
    pub extra: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub order: OrderId,
    pub penalty: Millis,
}

/// Total extra time of served orders plus penalties of rejected ones (ms).
pub fn objective(served: &[ServedRecord], rejected: &[RejectedRecord]) -> Result<f64, DomainError> {
    let mut seen = BTreeSet::new();
    for id in served.iter().map(|s| s.order).chain(rejected.iter().map(|r| r.order)) {
        if !seen.insert(id) {
            return Err(DomainError::DuplicateRecord(id));
        }
    }
    let served_sum: f64 = served.iter().map(|s| s.extra).sum();
    let penalty_sum: Millis = rejected.iter().map(|r| r.penalty).sum();
    Ok(served_sum + penalty_sum as f64)
}
