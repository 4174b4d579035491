//! Order pooling and dispatch for dynamic ridesharing.
//!
//! Pending orders live in a temporal shareability graph whose cliques are the
//! candidate groups. Each order caches its best group (lowest average extra
//! time), and a periodic check decides per order whether to dispatch that
//! group now or keep waiting. Decisions come from one of three strategies:
//! dispatch immediately, dispatch at the watching-window timeout, or dispatch
//! once the group's average extra time drops below a per-order threshold. The
//! thresholds come from a Gaussian-mixture model of historical extra times or
//! from a learned state-value function.

pub mod domain;
pub mod poolgraph;
pub mod routing;
pub mod simharness;
pub mod spatial;
pub mod strategy;
pub mod thresholdopt;
pub mod time;
pub mod valuelearn;

pub use domain::{ExtraTimeWeights, Group, Order, OrderId, RoutePlan, Worker, WorkerId};
pub use spatial::{Location, TravelModel};
pub use time::Millis;
