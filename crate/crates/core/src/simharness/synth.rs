//! Synthetic order streams: arrivals spread over a window, trips drawn partly
//! between a few hotspots (so some trips can share) and partly at random.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ingest::OrderRow;
use crate::spatial::haversine_m;

const M_PER_DEG_LAT: f64 = 111_195.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub orders: usize,
    pub duration_s: f64,
    pub seed: u64,
    pub center_lon: f64,
    pub center_lat: f64,
    /// Half-width of the square service area in meters.
    pub half_width_m: f64,
    pub hotspots: usize,
    /// Fraction of trips that start and end near hotspots.
    pub hotspot_share: f64,
    pub hotspot_sigma_m: f64,
    pub min_trip_m: f64,
    /// Fraction of orders carrying two riders.
    pub pair_share: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            orders: 5_000,
            duration_s: 3_600.0,
            seed: 1,
            center_lon: -73.98,
            center_lat: 40.75,
            half_width_m: 2_000.0,
            hotspots: 6,
            hotspot_share: 0.6,
            hotspot_sigma_m: 500.0,
            min_trip_m: 500.0,
            pair_share: 0.0,
        }
    }
}

struct Area {
    lon0: f64,
    lat0: f64,
    m_per_deg_lon: f64,
    half: f64,
}

impl Area {
    fn point(&self, x: f64, y: f64) -> (f64, f64) {
        let x = x.clamp(-self.half, self.half);
        let y = y.clamp(-self.half, self.half);
        (self.lon0 + x / self.m_per_deg_lon, self.lat0 + y / M_PER_DEG_LAT)
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw is enough here
    let u: f64 = 1.0 - rng.gen::<f64>();
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

/// Rows sorted by release time, with release times on whole milliseconds.
pub fn synth_orders(cfg: &SynthConfig) -> Vec<OrderRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let area = Area {
        lon0: cfg.center_lon,
        lat0: cfg.center_lat,
        m_per_deg_lon: M_PER_DEG_LAT * cfg.center_lat.to_radians().cos(),
        half: cfg.half_width_m,
    };
    let spots: Vec<(f64, f64)> = (0..cfg.hotspots.max(1))
        .map(|_| {
            let r = 0.7 * cfg.half_width_m;
            (rng.gen_range(-r..r), rng.gen_range(-r..r))
        })
        .collect();
    let mut times: Vec<f64> =
        (0..cfg.orders).map(|_| (rng.gen_range(0.0..cfg.duration_s) * 1000.0).round() / 1000.0).collect();
    times.sort_by(f64::total_cmp);
    let mut rows = Vec::with_capacity(cfg.orders);
    for t in times {
        let riders = if rng.gen_bool(cfg.pair_share.clamp(0.0, 1.0)) { 2 } else { 1 };
        let hot = cfg.hotspots > 0 && rng.gen_bool(cfg.hotspot_share.clamp(0.0, 1.0));
        let (from, to) = if hot {
            let a = rng.gen_range(0..spots.len());
            // each hotspot mostly feeds the next one
            let b = if rng.gen_bool(0.7) { (a + 1) % spots.len() } else { rng.gen_range(0..spots.len()) };
            (Some(spots[a]), Some(spots[b]))
        } else {
            (None, None)
        };
        let draw = |spot: Option<(f64, f64)>, rng: &mut ChaCha8Rng| match spot {
            Some((x, y)) => area.point(x + cfg.hotspot_sigma_m * gauss(rng), y + cfg.hotspot_sigma_m * gauss(rng)),
            None => area.point(rng.gen_range(-area.half..area.half), rng.gen_range(-area.half..area.half)),
        };
        loop {
            let p = draw(from, &mut rng);
            let d = draw(to, &mut rng);
            if haversine_m(p.0, p.1, d.0, d.1) >= cfg.min_trip_m {
                rows.push(OrderRow {
                    release_time_s: t,
                    pickup_lon: p.0,
                    pickup_lat: p.1,
                    dropoff_lon: d.0,
                    dropoff_lat: d.1,
                    riders,
                });
                break;
            }
        }
    }
    rows
}
