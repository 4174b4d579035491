//! Order CSV input: `release_time_s, pickup_lon, pickup_lat, dropoff_lon,
//! dropoff_lat[, riders]`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::SimError;
use crate::domain::{Order, OrderId};
use crate::spatial::{Location, TravelModel};
use crate::time::{secs_to_ms, Millis};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderRow {
    pub release_time_s: f64,
    pub pickup_lon: f64,
    pub pickup_lat: f64,
    pub dropoff_lon: f64,
    pub dropoff_lat: f64,
    #[serde(default = "one_rider")]
    pub riders: u32,
}

fn one_rider() -> u32 {
    1
}

impl OrderRow {
    pub fn pickup(&self) -> Location {
        Location::geo(self.pickup_lon, self.pickup_lat)
    }

    pub fn dropoff(&self) -> Location {
        Location::geo(self.dropoff_lon, self.dropoff_lat)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IngestStats {
    pub rows: usize,
    /// Rows that failed to parse or held out-of-range values.
    pub malformed: usize,
    /// Rows whose pickup and dropoff coincide.
    pub zero_cost: usize,
}

/// Builds orders from rows: deadline `t + deadline_scale * cost`, watching
/// window `wait_scale * cost`. Output is sorted by release time (stable) and
/// numbered from zero in that order.
pub fn orders_from_rows(
    rows: impl IntoIterator<Item = OrderRow>,
    model: &TravelModel,
    config: &SimConfig,
    stats: &mut IngestStats,
) -> Result<Vec<Order>, SimError> {
    let mut kept: Vec<(Millis, OrderRow, Millis)> = Vec::new();
    for row in rows {
        stats.rows += 1;
        let finite = [row.release_time_s, row.pickup_lon, row.pickup_lat, row.dropoff_lon, row.dropoff_lat]
            .iter()
            .all(|v| v.is_finite());
        let in_range = finite
            && row.release_time_s >= 0.0
            && row.riders >= 1
            && row.pickup_lon.abs() <= 180.0
            && row.dropoff_lon.abs() <= 180.0
            && row.pickup_lat.abs() <= 90.0
            && row.dropoff_lat.abs() <= 90.0;
        if !in_range {
            stats.malformed += 1;
            continue;
        }
        let cost = model.travel_cost(&row.pickup(), &row.dropoff())?;
        if cost == 0 {
            stats.zero_cost += 1;
            continue;
        }
        kept.push((secs_to_ms(row.release_time_s), row, cost));
    }
    kept.sort_by_key(|k| k.0);
    let mut orders = Vec::with_capacity(kept.len());
    for (i, (release, row, cost)) in kept.into_iter().enumerate() {
        let deadline = release + (config.deadline_scale * cost as f64).round() as Millis;
        let wait = (config.wait_scale * cost as f64).round() as Millis;
        orders.push(Order::new(OrderId(i as u32), row.pickup(), row.dropoff(), row.riders, release, deadline, wait, cost)?);
    }
    Ok(orders)
}

/// Parses an order CSV. Bad rows are skipped and counted.
pub fn ingest_orders(reader: impl Read, model: &TravelModel, config: &SimConfig) -> Result<(Vec<Order>, IngestStats), SimError> {
    let mut stats = IngestStats::default();
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<OrderRow>() {
        match rec {
            Ok(r) => rows.push(r),
            Err(e) => {
                stats.rows += 1;
                stats.malformed += 1;
                log::debug!("skipping order row: {e}");
            }
        }
    }
    let orders = orders_from_rows(rows, model, config, &mut stats)?;
    if stats.malformed + stats.zero_cost > 0 {
        log::warn!("skipped {} malformed and {} zero-length order rows", stats.malformed, stats.zero_cost);
    }
    Ok((orders, stats))
}

pub fn write_order_rows(rows: &[OrderRow], writer: impl Write) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
