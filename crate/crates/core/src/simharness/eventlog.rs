//! Event log rows and CSV I/O.
//!
//! Every order gets one `arrive` row and then either one dispatch row or one
//! `reject` row. A dispatched group also gets one `assign` row whose
//! `cost_ms` is the worker's travel (approach plus route). Durations are ms;
//! `t_e` and `theta_ms` are weighted ms and may be fractional.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::strategy::DispatchCause;
use crate::time::Millis;

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrive,
    DispatchOnline,
    DispatchTimeout,
    DispatchThreshold,
    Assign,
    Reject,
}

impl EventKind {
    pub fn dispatch(cause: DispatchCause) -> Self {
        match cause {
            DispatchCause::Online => EventKind::DispatchOnline,
            DispatchCause::Timeout => EventKind::DispatchTimeout,
            DispatchCause::Threshold => EventKind::DispatchThreshold,
        }
    }

    pub fn cause(self) -> Option<DispatchCause> {
        match self {
            EventKind::DispatchOnline => Some(DispatchCause::Online),
            EventKind::DispatchTimeout => Some(DispatchCause::Timeout),
            EventKind::DispatchThreshold => Some(DispatchCause::Threshold),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub time_ms: Millis,
    pub event: EventKind,
    pub order_id: Option<u32>,
    pub group_id: Option<u64>,
    pub worker_id: Option<u32>,
    pub t_r: Option<Millis>,
    pub t_d: Option<Millis>,
    pub t_e: Option<f64>,
    pub theta_ms: Option<f64>,
    pub cost_ms: Option<Millis>,
}

impl EventRow {
    pub fn new(time_ms: Millis, event: EventKind) -> Self {
        EventRow {
            time_ms,
            event,
            order_id: None,
            group_id: None,
            worker_id: None,
            t_r: None,
            t_d: None,
            t_e: None,
            theta_ms: None,
            cost_ms: None,
        }
    }
}

pub fn write_events(rows: &[EventRow], writer: impl Write) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events(reader: impl Read) -> Result<Vec<EventRow>, SimError> {
    let mut rows = Vec::new();
    for r in csv::Reader::from_reader(reader).deserialize() {
        rows.push(r?);
    }
    Ok(rows)
}
