//! Consistency checks run against an event log.

use std::collections::BTreeMap;

use crate::domain::{ExtraTimeWeights, Order, OrderId};
use crate::time::Millis;

use super::eventlog::{EventKind, EventRow};
use super::SimError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AuditSummary {
    pub orders: usize,
    pub served: usize,
    pub rejected: usize,
    pub groups: usize,
    pub threshold_dispatches: usize,
}

fn fail(msg: String) -> SimError {
    SimError::Log(msg)
}

/// Checks that every order ends exactly once, that served orders met their
/// deadlines, that recorded extra times follow from their parts, that each
/// threshold dispatch kept the group's mean extra time within the mean
/// threshold, and that no worker ran two trips at once.
pub fn audit_log(rows: &[EventRow], orders: &[Order], weights: ExtraTimeWeights) -> Result<AuditSummary, SimError> {
    let by_id: BTreeMap<OrderId, &Order> = orders.iter().map(|o| (o.id, o)).collect();
    let mut arrived = BTreeMap::new();
    let mut ended: BTreeMap<u32, EventKind> = BTreeMap::new();
    let mut groups: BTreeMap<u64, Vec<&EventRow>> = BTreeMap::new();
    let mut trips: BTreeMap<u32, Vec<(Millis, Millis)>> = BTreeMap::new();
    let mut sum = AuditSummary::default();
    for r in rows {
        match r.event {
            EventKind::Arrive => {
                let id = r.order_id.ok_or_else(|| fail("arrive without order".into()))?;
                if arrived.insert(id, r.time_ms).is_some() {
                    return Err(fail(format!("order {id} arrived twice")));
                }
                sum.orders += 1;
            }
            EventKind::Assign => {
                let w = r.worker_id.ok_or_else(|| fail("assign without worker".into()))?;
                let cost = r.cost_ms.ok_or_else(|| fail("assign without cost".into()))?;
                trips.entry(w).or_default().push((r.time_ms, r.time_ms + cost));
            }
            kind => {
                let id = r.order_id.ok_or_else(|| fail(format!("{kind:?} without order")))?;
                if !arrived.contains_key(&id) {
                    return Err(fail(format!("order {id} ended before arriving")));
                }
                if let Some(prev) = ended.insert(id, kind) {
                    return Err(fail(format!("order {id} ended twice ({prev:?}, {kind:?})")));
                }
                let o = by_id.get(&OrderId(id)).ok_or_else(|| fail(format!("unknown order {id}")))?;
                let t_r = r.t_r.ok_or_else(|| fail(format!("order {id} without t_r")))?;
                if t_r != r.time_ms - o.release {
                    return Err(fail(format!("order {id}: t_r {t_r} disagrees with its timestamps")));
                }
                if kind == EventKind::Reject {
                    sum.rejected += 1;
                    if r.t_e != Some(o.penalty() as f64) {
                        return Err(fail(format!("order {id}: rejection not charged its penalty")));
                    }
                    continue;
                }
                sum.served += 1;
                let t_d = r.t_d.ok_or_else(|| fail(format!("order {id} without t_d")))?;
                if t_d < 0 || o.release + t_r + o.direct_cost + t_d >= o.deadline {
                    return Err(fail(format!("order {id} misses its deadline")));
                }
                if r.t_e != Some(weights.weigh(t_d, t_r)) {
                    return Err(fail(format!("order {id}: t_e is not the weighted sum of t_d and t_r")));
                }
                let g = r.group_id.ok_or_else(|| fail(format!("order {id} dispatched without group")))?;
                groups.entry(g).or_default().push(r);
            }
        }
    }
    if ended.len() != arrived.len() {
        return Err(fail(format!("{} orders arrived, {} ended", arrived.len(), ended.len())));
    }
    sum.groups = groups.len();
    for (g, rows) in &groups {
        if rows.iter().any(|r| r.event != rows[0].event || r.time_ms != rows[0].time_ms) {
            return Err(fail(format!("group {g} mixes dispatch events")));
        }
        if rows[0].event == EventKind::DispatchThreshold {
            sum.threshold_dispatches += 1;
            let theta = rows[0].theta_ms.ok_or_else(|| fail(format!("group {g} lacks its threshold")))?;
            let mean = rows.iter().map(|r| r.t_e.expect("checked")).sum::<f64>() / rows.len() as f64;
            if mean > theta {
                return Err(fail(format!("group {g}: mean extra time {mean} exceeds threshold {theta}")));
            }
        }
    }
    for (w, mut spans) in trips {
        spans.sort_unstable();
        if let Some(p) = spans.windows(2).find(|p| p[1].0 < p[0].1) {
            return Err(fail(format!("worker {w} starts a trip at {} before finishing at {}", p[1].0, p[0].1)));
        }
    }
    Ok(sum)
}
