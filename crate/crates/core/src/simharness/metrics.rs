//! Run summaries, and their recomputation from an event log.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{objective, OrderId, RejectedRecord, ServedRecord, WorkerId};
use crate::strategy::DispatchCause;
use crate::time::{ms_to_secs, Millis};

use super::eventlog::{EventKind, EventRow};
use super::SimError;

/// Penalty multiplier on a rejected order's direct cost in the unified cost.
pub const REJECT_COST_FACTOR: Millis = 10;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CauseCounts {
    pub online: usize,
    pub timeout: usize,
    pub threshold: usize,
}

/// Deterministic summary of one run; times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub orders: usize,
    pub served: usize,
    pub rejected: usize,
    pub service_rate: f64,
    /// Extra time of served orders plus penalties of rejected ones.
    pub total_extra_time_s: f64,
    pub mean_extra_time_s: f64,
    pub unified_cost_s: f64,
    pub worker_travel_s: f64,
    /// Over served orders.
    pub mean_response_s: f64,
    pub mean_detour_s: f64,
    pub groups: usize,
    pub mean_group_size: f64,
    /// Served orders by the cause that dispatched them.
    pub dispatch_causes: CauseCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

/// Wall-clock figures; kept apart so reports stay reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_s: f64,
    pub per_order_s: f64,
}

/// Worker travel plus `10 * direct cost` of each rejected order, in ms.
pub fn unified_cost(rejected_direct_costs: impl IntoIterator<Item = Millis>, worker_travel: Millis) -> Millis {
    worker_travel + REJECT_COST_FACTOR * rejected_direct_costs.into_iter().sum::<Millis>()
}

/// Raw totals in ms, shared by the engine and log recomputation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Totals {
    pub orders: usize,
    pub served: Vec<ServedRecord>,
    pub rejected: Vec<RejectedRecord>,
    pub rejected_direct: Vec<Millis>,
    pub worker_travel: Millis,
    pub groups: usize,
    pub causes: CauseCounts,
}

impl Totals {
    pub fn report(&self) -> Result<MetricsReport, SimError> {
        let orders = self.orders;
        let served = self.served.len();
        let rejected = self.rejected.len();
        let objective_ms = objective(&self.served, &self.rejected)?;
        let resp: Millis = self.served.iter().map(|s| s.response).sum();
        let detour: Millis = self.served.iter().map(|s| s.detour).sum();
        let per = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
        Ok(MetricsReport {
            orders,
            served,
            rejected,
            service_rate: per(served as f64, orders),
            total_extra_time_s: objective_ms / 1000.0,
            mean_extra_time_s: per(objective_ms / 1000.0, orders),
            unified_cost_s: ms_to_secs(unified_cost(self.rejected_direct.iter().copied(), self.worker_travel)),
            worker_travel_s: ms_to_secs(self.worker_travel),
            mean_response_s: per(ms_to_secs(resp), served),
            mean_detour_s: per(ms_to_secs(detour), served),
            groups: self.groups,
            mean_group_size: per(served as f64, self.groups),
            dispatch_causes: self.causes,
            timing: None,
        })
    }
}

/// Rebuilds the totals from an event log alone.
pub fn totals_from_log(rows: &[EventRow]) -> Result<Totals, SimError> {
    let mut t = Totals::default();
    let mut group_worker: BTreeMap<u64, u32> = BTreeMap::new();
    let mut pending: Vec<&EventRow> = Vec::new();
    let mut groups = BTreeSet::new();
    for r in rows {
        match r.event {
            EventKind::Arrive => t.orders += 1,
            EventKind::Assign => {
                let g = r.group_id.ok_or_else(|| bad(r, "assign without group"))?;
                let w = r.worker_id.ok_or_else(|| bad(r, "assign without worker"))?;
                group_worker.insert(g, w);
                t.worker_travel += r.cost_ms.ok_or_else(|| bad(r, "assign without cost"))?;
            }
            EventKind::Reject => {
                let id = r.order_id.ok_or_else(|| bad(r, "reject without order"))?;
                let p = r.t_e.ok_or_else(|| bad(r, "reject without penalty"))?;
                t.rejected.push(RejectedRecord { order: OrderId(id), penalty: p as Millis });
                t.rejected_direct.push(r.cost_ms.ok_or_else(|| bad(r, "reject without cost"))?);
            }
            kind => {
                let cause = kind.cause().expect("dispatch kinds");
                match cause {
                    DispatchCause::Online => t.causes.online += 1,
                    DispatchCause::Timeout => t.causes.timeout += 1,
                    DispatchCause::Threshold => t.causes.threshold += 1,
                }
                groups.insert(r.group_id.ok_or_else(|| bad(r, "dispatch without group"))?);
                pending.push(r);
            }
        }
    }
    for r in pending {
        let g = r.group_id.expect("checked");
        let w = *group_worker.get(&g).ok_or_else(|| bad(r, "dispatched group was never assigned"))?;
        t.served.push(ServedRecord {
            order: OrderId(r.order_id.ok_or_else(|| bad(r, "dispatch without order"))?),
            worker: WorkerId(w),
            response: r.t_r.ok_or_else(|| bad(r, "dispatch without t_r"))?,
            detour: r.t_d.ok_or_else(|| bad(r, "dispatch without t_d"))?,
            extra: r.t_e.ok_or_else(|| bad(r, "dispatch without t_e"))?,
        });
    }
    t.groups = groups.len();
    Ok(t)
}

fn bad(r: &EventRow, what: &str) -> SimError {
    SimError::Log(format!("{what} at t={} ms", r.time_ms))
}

/// Report recomputed from an event log.
pub fn report_from_log(rows: &[EventRow]) -> Result<MetricsReport, SimError> {
    totals_from_log(rows)?.report()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unified_cost_arithmetic() {
        assert_eq!(unified_cost([], 12_345), 12_345);
        assert_eq!(unified_cost([600_000], 0), 6_000_000);
    }

    #[test]
    fn empty_log_reports_zeros() {
        let r = report_from_log(&[]).unwrap();
        assert_eq!((r.orders, r.served, r.service_rate, r.mean_extra_time_s), (0, 0, 0.0, 0.0));
    }
}
