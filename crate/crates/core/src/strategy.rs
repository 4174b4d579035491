//! Dispatch decisions for a pooled order's best group.
//!
//! * `online` dispatches as soon as a group exists.
//! * `timeout` holds until a member's watching window closes.
//! * `threshold` (alias `expect`) dispatches once the group's average extra
//!   time falls to the mean of its members' expected thresholds, and always
//!   once a member's watching window has closed.
//!
//! Thresholds come from a fixed table, from the mixture-model optimum for the
//! order's penalty, or from a learned value `V(s)` as `clamp(p - V(s), 0, p)`.
//! Internally they are milliseconds of extra time.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{ExtraTimeWeights, Order, OrderId, RoutePlan};
use crate::routing::average_extra_time;
use crate::thresholdopt::{optimal_theta, GmmModel};
use crate::time::{Millis, MS_PER_SEC};
use crate::valuelearn::{StateVector, ValueNet};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("no threshold for order {0}")]
    MissingThreshold(OrderId),
    #[error("threshold strategy needs a threshold source")]
    NoSource,
    #[error("value-net thresholds need the order's state")]
    NoState,
    #[error("threshold {theta_ms} ms for order {order} is outside [0, {p_ms}]")]
    OutOfRange { order: OrderId, theta_ms: f64, p_ms: Millis },
    #[error("threshold table: {0}")]
    Table(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    Online,
    Timeout,
    #[serde(rename = "expect", alias = "threshold")]
    Threshold,
}

impl std::str::FromStr for StrategyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "online" => Ok(StrategyKind::Online),
            "timeout" => Ok(StrategyKind::Timeout),
            "expect" | "threshold" => Ok(StrategyKind::Threshold),
            other => Err(format!("unknown strategy {other:?} (online, timeout, expect)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DispatchCause {
    Online,
    Timeout,
    Threshold,
}

impl DispatchCause {
    pub fn event_name(self) -> &'static str {
        match self {
            DispatchCause::Online => "dispatch_online",
            DispatchCause::Timeout => "dispatch_timeout",
            DispatchCause::Threshold => "dispatch_threshold",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Hold,
    Dispatch(DispatchCause),
}

impl Decision {
    pub fn is_dispatch(self) -> bool {
        matches!(self, Decision::Dispatch(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionStrategy {
    pub kind: StrategyKind,
    pub weights: ExtraTimeWeights,
    /// Timeout strategy only: also dispatch when the group's route expires
    /// before the next check.
    pub expiry_guard: bool,
    pub check_period: Millis,
}

impl DecisionStrategy {
    pub fn new(kind: StrategyKind) -> Self {
        DecisionStrategy {
            kind,
            weights: ExtraTimeWeights::default(),
            expiry_guard: true,
            check_period: 10 * MS_PER_SEC,
        }
    }
}

/// Earliest watching-window close among the members.
pub fn earliest_timeout(members: &[&Order]) -> Millis {
    members.iter().map(|o| o.timeout_at()).min().expect("non-empty group")
}

/// Decides whether to dispatch `members` along `route` at `t_s`.
/// `thresholds[k]` is member k's expected threshold in ms; only the threshold
/// kind reads it.
pub fn make_decision(
    strategy: &DecisionStrategy,
    members: &[&Order],
    route: &RoutePlan,
    t_s: Millis,
    thresholds: &[Option<f64>],
) -> Result<Decision, StrategyError> {
    let timed_out = t_s > earliest_timeout(members);
    match strategy.kind {
        StrategyKind::Online => Ok(Decision::Dispatch(DispatchCause::Online)),
        StrategyKind::Timeout => {
            let expiring = strategy.expiry_guard && route.expiry <= t_s + strategy.check_period;
            Ok(if timed_out || expiring { Decision::Dispatch(DispatchCause::Timeout) } else { Decision::Hold })
        }
        StrategyKind::Threshold => {
            if timed_out {
                return Ok(Decision::Dispatch(DispatchCause::Timeout));
            }
            let mean_theta = mean_threshold(members, thresholds)?;
            let avg = average_extra_time(members, route, t_s, strategy.weights);
            Ok(if avg <= mean_theta { Decision::Dispatch(DispatchCause::Threshold) } else { Decision::Hold })
        }
    }
}

/// Mean of the members' thresholds, summed in member order.
pub fn mean_threshold(members: &[&Order], thresholds: &[Option<f64>]) -> Result<f64, StrategyError> {
    let mut sum = 0.0;
    for (k, o) in members.iter().enumerate() {
        sum += thresholds.get(k).copied().flatten().ok_or(StrategyError::MissingThreshold(o.id))?;
    }
    Ok(sum / members.len() as f64)
}

/// Per-order thresholds in milliseconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThresholdTable {
    pub thetas: BTreeMap<OrderId, f64>,
}

#[derive(Serialize, Deserialize)]
struct ThetaRow {
    order_id: u32,
    theta_seconds: f64,
}

impl ThresholdTable {
    pub fn get(&self, id: OrderId) -> Option<f64> {
        self.thetas.get(&id).copied()
    }

    pub fn read_csv(reader: impl Read) -> Result<Self, StrategyError> {
        let mut thetas = BTreeMap::new();
        for row in csv::Reader::from_reader(reader).deserialize::<ThetaRow>() {
            let row = row.map_err(|e| StrategyError::Table(e.to_string()))?;
            thetas.insert(OrderId(row.order_id), row.theta_seconds * MS_PER_SEC as f64);
        }
        Ok(ThresholdTable { thetas })
    }

    pub fn write_csv(&self, writer: impl Write) -> Result<(), StrategyError> {
        let mut w = csv::Writer::from_writer(writer);
        for (id, theta) in &self.thetas {
            w.serialize(ThetaRow { order_id: id.0, theta_seconds: theta / MS_PER_SEC as f64 })
                .map_err(|e| StrategyError::Table(e.to_string()))?;
        }
        w.flush().map_err(|e| StrategyError::Table(e.to_string()))
    }
}

/// Where expected thresholds come from.
#[derive(Debug, Clone)]
pub enum ThresholdSource {
    Fixed(ThresholdTable),
    /// Mixture of historical extra times in seconds.
    GmmOptimal(GmmModel),
    ValueNet(Box<ValueNet>),
}

/// Expected threshold of `order` in ms. Value-net sources need `state`.
pub fn threshold_of(order: &Order, source: &ThresholdSource, state: Option<&StateVector>) -> Result<f64, StrategyError> {
    let p = order.penalty();
    match source {
        ThresholdSource::Fixed(table) => {
            let theta = table.get(order.id).ok_or(StrategyError::MissingThreshold(order.id))?;
            if !(0.0..=p as f64).contains(&theta) {
                return Err(StrategyError::OutOfRange { order: order.id, theta_ms: theta, p_ms: p });
            }
            Ok(theta)
        }
        ThresholdSource::GmmOptimal(model) => {
            let p_s = p as f64 / MS_PER_SEC as f64;
            Ok((optimal_theta(model, p_s) * MS_PER_SEC as f64).clamp(0.0, p as f64))
        }
        ThresholdSource::ValueNet(net) => {
            let state = state.ok_or(StrategyError::NoState)?;
            Ok(theta_from_value(p, net.value(state)))
        }
    }
}

/// `clamp(p - V, 0, p)` with `V` in seconds and the result in ms.
pub fn theta_from_value(p: Millis, value_s: f64) -> f64 {
    (p as f64 - value_s * MS_PER_SEC as f64).clamp(0.0, p as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Group, MemberLeg};
    use crate::spatial::Location;
    use crate::thresholdopt::UniformCdf;

    fn order(id: u32, release: Millis, wait: Millis) -> Order {
        Order::new(OrderId(id), Location::Node(0), Location::Node(1), 1, release, release + 1_000_000, wait, 100_000).unwrap()
    }

    fn route(members: &[&Order], detours: &[Millis], expiry: Millis) -> RoutePlan {
        RoutePlan {
            stops: vec![],
            locations: vec![],
            total: 0,
            legs: members
                .iter()
                .zip(detours)
                .map(|(o, &d)| MemberLeg { order: o.id, sub_cost: o.direct_cost + d, detour: d })
                .collect(),
            approach: 0,
            expiry,
            peak_load: 1,
        }
    }

    #[test]
    fn online_always_dispatches() {
        let o = order(0, 0, 60_000);
        let r = route(&[&o], &[0], 1_000_000);
        let s = DecisionStrategy::new(StrategyKind::Online);
        assert_eq!(make_decision(&s, &[&o], &r, 0, &[]).unwrap(), Decision::Dispatch(DispatchCause::Online));
    }

    #[test]
    fn timeout_waits_for_the_window() {
        let o = order(0, 0, 60_000);
        let r = route(&[&o], &[0], 1_000_000);
        let mut s = DecisionStrategy::new(StrategyKind::Timeout);
        assert_eq!(make_decision(&s, &[&o], &r, 60_000, &[]).unwrap(), Decision::Hold);
        assert!(make_decision(&s, &[&o], &r, 60_001, &[]).unwrap().is_dispatch());
        let expiring = route(&[&o], &[0], 15_000);
        assert!(make_decision(&s, &[&o], &expiring, 5_000, &[]).unwrap().is_dispatch());
        s.expiry_guard = false;
        assert_eq!(make_decision(&s, &[&o], &expiring, 5_000, &[]).unwrap(), Decision::Hold);
    }

    #[test]
    fn threshold_rule() {
        let o = order(0, 0, 600_000);
        let s = DecisionStrategy::new(StrategyKind::Threshold);
        // t_e = 30 s against theta 40 s, then 50 s against 40 s
        let r = route(&[&o], &[20_000], 1_000_000);
        assert_eq!(
            make_decision(&s, &[&o], &r, 10_000, &[Some(40_000.0)]).unwrap(),
            Decision::Dispatch(DispatchCause::Threshold)
        );
        assert_eq!(make_decision(&s, &[&o], &r, 30_000, &[Some(40_000.0)]).unwrap(), Decision::Hold);
        // past the watching window the threshold no longer matters
        assert_eq!(
            make_decision(&s, &[&o], &r, 600_001, &[Some(0.0)]).unwrap(),
            Decision::Dispatch(DispatchCause::Timeout)
        );
        assert!(matches!(make_decision(&s, &[&o], &r, 0, &[None]), Err(StrategyError::MissingThreshold(_))));
    }

    #[test]
    fn mixed_group_uses_mean_threshold_and_earliest_timeout() {
        let a = order(0, 0, 30_000);
        let b = order(1, 20_000, 600_000);
        let s = DecisionStrategy::new(StrategyKind::Threshold);
        let r = route(&[&a, &b], &[0, 0], 1_000_000);
        // at 25 s: extras 25 s and 5 s, mean 15 s; thetas 10 s and 20 s, mean 15 s
        let th = [Some(10_000.0), Some(20_000.0)];
        assert!(make_decision(&s, &[&a, &b], &r, 25_000, &th).unwrap().is_dispatch());
        assert_eq!(make_decision(&s, &[&a, &b], &r, 26_000, &th).unwrap(), Decision::Hold);
        assert_eq!(
            make_decision(&s, &[&a, &b], &r, 30_001, &th).unwrap(),
            Decision::Dispatch(DispatchCause::Timeout)
        );
        let _ = Group::new([a.id, b.id]);
    }

    #[test]
    fn value_thresholds_clamp() {
        assert_eq!(theta_from_value(360_000, 360.0), 0.0);
        assert_eq!(theta_from_value(360_000, 0.0), 360_000.0);
        assert_eq!(theta_from_value(360_000, -5.0), 360_000.0);
        assert_eq!(theta_from_value(360_000, 500.0), 0.0);
        assert_eq!(theta_from_value(360_000, 100.0), 260_000.0);
    }

    #[test]
    fn gmm_source_and_uniform_stub() {
        let p = 360.0;
        assert!((optimal_theta(&UniformCdf { lo: 0.0, hi: p }, p) - p / 2.0).abs() < 1e-6 * p);
        let o = order(0, 0, 0);
        let m = GmmModel::new(vec![1.0], vec![100.0], vec![1e-4]).unwrap();
        let th = threshold_of(&o, &ThresholdSource::GmmOptimal(m), None).unwrap();
        assert!((th - 100_000.0).abs() < 100.0, "{th}");
    }

    #[test]
    fn table_round_trip_and_range() {
        let mut t = ThresholdTable::default();
        t.thetas.insert(OrderId(3), 12_500.0);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "order_id,theta_seconds\n3,12.5\n");
        let back = ThresholdTable::read_csv(&buf[..]).unwrap();
        assert_eq!(back, t);
        let o = order(3, 0, 0);
        assert_eq!(threshold_of(&o, &ThresholdSource::Fixed(back), None).unwrap(), 12_500.0);
        let mut bad = ThresholdTable::default();
        bad.thetas.insert(OrderId(3), -1.0);
        assert!(threshold_of(&o, &ThresholdSource::Fixed(bad), None).is_err());
    }

    #[test]
    fn raising_thresholds_only_adds_dispatches() {
        let o = order(0, 0, 600_000);
        let s = DecisionStrategy::new(StrategyKind::Threshold);
        for d in (0..100_000).step_by(7_000) {
            let r = route(&[&o], &[d], 1_000_000);
            for th in (0..100_000).step_by(9_000) {
                let lo = make_decision(&s, &[&o], &r, 5_000, &[Some(th as f64)]).unwrap();
                let hi = make_decision(&s, &[&o], &r, 5_000, &[Some(th as f64 + 5_000.0)]).unwrap();
                assert!(!lo.is_dispatch() || hi.is_dispatch());
            }
        }
    }
}
