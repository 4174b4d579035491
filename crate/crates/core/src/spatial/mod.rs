//! Travel-cost models and the uniform grid index.
//!
//! Two cost models are supported. The graph model runs Dijkstra over an
//! undirected weighted graph and caches all-pairs costs at construction; it
//! exists for small hand-built networks and oracle tests. The geodesic model
//! charges great-circle distance at a constant speed.
//!
//! Geodesic costs are rounded *up* to whole milliseconds. Ceiling is
//! subadditive, so integer costs keep the triangle inequality of the
//! underlying metric, which the pooling graph relies on.

mod grid;

pub use grid::{BoundingBox, GridIndex};

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Worker, WorkerId};
use crate::time::Millis;

pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Default vehicle speed for the geodesic model.
pub const DEFAULT_SPEED_MPS: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpatialError {
    #[error("no path between {from} and {to}")]
    Unreachable { from: Location, to: Location },
    #[error("node {0} is not part of the graph")]
    UnknownNode(u32),
    #[error("location {0} does not match the {1} travel model")]
    ModeMismatch(Location, &'static str),
    #[error("edge ({u}, {v}) has non-positive weight {weight}")]
    BadEdgeWeight { u: u32, v: u32, weight: f64 },
    #[error("speed must be positive, got {0}")]
    BadSpeed(f64),
    #[error("graph file: {0}")]
    Parse(String),
}

/// A place on the map: a graph node or a lon/lat pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Location {
    Node(u32),
    Geo { lon: f64, lat: f64 },
}

impl Location {
    pub fn geo(lon: f64, lat: f64) -> Self {
        Location::Geo { lon, lat }
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Node(id) => write!(f, "node {id}"),
            Location::Geo { lon, lat } => write!(f, "({lon:.6}, {lat:.6})"),
        }
    }
}

/// Great-circle distance in meters.
pub fn haversine_m(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> f64 {
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Meters to whole milliseconds of driving, rounded up.
pub(crate) fn meters_to_ms(meters: f64, speed_mps: f64) -> Millis {
    (meters * 1_000.0 / speed_mps - 1e-6).ceil().max(0.0) as Millis
}

/// Undirected weighted graph with an all-pairs cost table.
#[derive(Debug, Clone)]
pub struct RoadGraph {
    node_count: usize,
    edge_count: usize,
    // row-major node_count x node_count; -1 marks unreachable
    dist: Vec<Millis>,
}

impl RoadGraph {
    /// Builds the graph from `(u, v, seconds)` edges.
    pub fn new(node_count: usize, edges: &[(u32, u32, f64)]) -> Result<Self, SpatialError> {
        let mut adj: Vec<Vec<(usize, Millis)>> = vec![Vec::new(); node_count];
        for &(u, v, weight) in edges {
            if !(weight > 0.0) || !weight.is_finite() {
                return Err(SpatialError::BadEdgeWeight { u, v, weight });
            }
            for node in [u, v] {
                if node as usize >= node_count {
                    return Err(SpatialError::UnknownNode(node));
                }
            }
            let w = crate::time::secs_to_ms(weight).max(1);
            adj[u as usize].push((v as usize, w));
            adj[v as usize].push((u as usize, w));
        }
        if node_count > 1000 {
            log::warn!("all-pairs table for {node_count} nodes; graph mode is meant for small networks");
        }
        let mut dist = vec![-1; node_count * node_count];
        for src in 0..node_count {
            dijkstra(&adj, src, &mut dist[src * node_count..(src + 1) * node_count]);
        }
        Ok(RoadGraph { node_count, edge_count: edges.len(), dist })
    }

    /// Parses `node_count edge_count` followed by `u v weight_seconds` lines.
    /// Blank lines and `#` comments are ignored.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self, SpatialError> {
        let mut header: Option<(usize, usize)> = None;
        let mut edges = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| SpatialError::Parse(e.to_string()))?;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || SpatialError::Parse(format!("line {}: `{line}`", lineno + 1));
            match header {
                None => {
                    if fields.len() != 2 {
                        return Err(bad());
                    }
                    let n = fields[0].parse().map_err(|_| bad())?;
                    let m = fields[1].parse().map_err(|_| bad())?;
                    header = Some((n, m));
                }
                Some(_) => {
                    if fields.len() != 3 {
                        return Err(bad());
                    }
                    let u = fields[0].parse().map_err(|_| bad())?;
                    let v = fields[1].parse().map_err(|_| bad())?;
                    let w = fields[2].parse().map_err(|_| bad())?;
                    edges.push((u, v, w));
                }
            }
        }
        let (n, m) = header.ok_or_else(|| SpatialError::Parse("missing header".into()))?;
        if edges.len() != m {
            return Err(SpatialError::Parse(format!(
                "header announces {m} edges, found {}",
                edges.len()
            )));
        }
        RoadGraph::new(n, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    fn cost(&self, a: u32, b: u32) -> Result<Millis, SpatialError> {
        for node in [a, b] {
            if node as usize >= self.node_count {
                return Err(SpatialError::UnknownNode(node));
            }
        }
        match self.dist[a as usize * self.node_count + b as usize] {
            -1 => Err(SpatialError::Unreachable {
                from: Location::Node(a),
                to: Location::Node(b),
            }),
            d => Ok(d),
        }
    }
}

fn dijkstra(adj: &[Vec<(usize, Millis)>], src: usize, out: &mut [Millis]) {
    let mut heap = BinaryHeap::new();
    out[src] = 0;
    heap.push(Reverse((0, src)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if d > out[u] && out[u] != -1 {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if out[v] == -1 || nd < out[v] {
                out[v] = nd;
                heap.push(Reverse((nd, v)));
            }
        }
    }
}

/// How travel cost between two locations is measured.
#[derive(Debug, Clone)]
pub enum TravelModel {
    Graph(RoadGraph),
    Geodesic { speed_mps: f64 },
}

impl TravelModel {
    pub fn geodesic(speed_mps: f64) -> Result<Self, SpatialError> {
        if !(speed_mps > 0.0) || !speed_mps.is_finite() {
            return Err(SpatialError::BadSpeed(speed_mps));
        }
        Ok(TravelModel::Geodesic { speed_mps })
    }

    pub fn is_geodesic(&self) -> bool {
        matches!(self, TravelModel::Geodesic { .. })
    }

    /// Shortest travel cost between two locations.
    pub fn travel_cost(&self, a: &Location, b: &Location) -> Result<Millis, SpatialError> {
        match (self, a, b) {
            (TravelModel::Graph(g), Location::Node(x), Location::Node(y)) => g.cost(*x, *y),
            (TravelModel::Geodesic { speed_mps }, Location::Geo { lon: x1, lat: y1 }, Location::Geo { lon: x2, lat: y2 }) => {
                Ok(meters_to_ms(haversine_m(*x1, *y1, *x2, *y2), *speed_mps))
            }
            (TravelModel::Graph(_), other @ Location::Geo { .. }, _)
            | (TravelModel::Graph(_), _, other @ Location::Geo { .. }) => {
                Err(SpatialError::ModeMismatch(*other, "graph"))
            }
            (TravelModel::Geodesic { .. }, other @ Location::Node(_), _)
            | (TravelModel::Geodesic { .. }, _, other @ Location::Node(_)) => {
                Err(SpatialError::ModeMismatch(*other, "geodesic"))
            }
        }
    }

    /// Cost of driving the stops in order; a single stop costs nothing.
    pub fn route_cost(&self, stops: &[Location]) -> Result<Millis, SpatialError> {
        stops
            .windows(2)
            .map(|w| self.travel_cost(&w[0], &w[1]))
            .sum()
    }
}

/// Idle worker closest to `loc` by travel cost, lowest id on ties.
///
/// Uses the grid ring search when an index is supplied and the model is
/// geodesic, otherwise a linear scan.
pub fn nearest_idle_worker(
    model: &TravelModel,
    index: Option<&GridIndex>,
    loc: &Location,
    workers: &[Worker],
) -> Option<WorkerId> {
    nearest_worker_where(model, index, loc, workers, |_| true).map(|(id, _)| id)
}

/// Like [`nearest_idle_worker`], restricted to idle workers accepted by `accept`.
/// Returns the worker and its travel cost to `loc`.
pub fn nearest_worker_where(
    model: &TravelModel,
    index: Option<&GridIndex>,
    loc: &Location,
    workers: &[Worker],
    accept: impl Fn(&Worker) -> bool,
) -> Option<(WorkerId, Millis)> {
    let ok = |w: &Worker| w.is_idle() && accept(w);
    match (model, index) {
        (TravelModel::Geodesic { speed_mps }, Some(index)) => index
            .nearest(*speed_mps, loc, |id| {
                let w = &workers[id];
                if !ok(w) {
                    return None;
                }
                model.travel_cost(&w.location, loc).ok()
            })
            .map(|(id, cost)| (workers[id].id, cost)),
        _ => linear_nearest(model, loc, workers, ok),
    }
}

fn linear_nearest(
    model: &TravelModel,
    loc: &Location,
    workers: &[Worker],
    ok: impl Fn(&Worker) -> bool,
) -> Option<(WorkerId, Millis)> {
    workers
        .iter()
        .filter(|w| ok(w))
        .filter_map(|w| model.travel_cost(&w.location, loc).ok().map(|c| (c, w.id)))
        .min()
        .map(|(c, id)| (id, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Availability;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line_graph() -> RoadGraph {
        RoadGraph::new(4, &[(0, 1, 1.0), (1, 2, 2.0), (2, 3, 3.0)]).unwrap()
    }

    #[test]
    fn identity_cost_is_zero() {
        let g = TravelModel::Graph(line_graph());
        assert_eq!(g.travel_cost(&Location::Node(2), &Location::Node(2)).unwrap(), 0);
        let geo = TravelModel::geodesic(10.0).unwrap();
        let p = Location::geo(104.06, 30.66);
        assert_eq!(geo.travel_cost(&p, &p).unwrap(), 0);
    }

    #[test]
    fn geodesic_kilometer_at_ten_mps_is_hundred_seconds() {
        // 1000 m due north: dlat = 1000 / R radians
        let dlat = (1000.0 / EARTH_RADIUS_M).to_degrees();
        let a = Location::geo(0.0, 0.0);
        let b = Location::geo(0.0, dlat);
        let model = TravelModel::geodesic(10.0).unwrap();
        assert_eq!(model.travel_cost(&a, &b).unwrap(), 100_000);
    }

    #[test]
    fn unreachable_pair_is_an_error() {
        let g = RoadGraph::new(3, &[(0, 1, 1.0)]).unwrap();
        let model = TravelModel::Graph(g);
        let err = model.travel_cost(&Location::Node(0), &Location::Node(2)).unwrap_err();
        assert!(matches!(err, SpatialError::Unreachable { .. }));
        assert!(model.route_cost(&[Location::Node(0), Location::Node(1), Location::Node(2)]).is_err());
    }

    #[test]
    fn mode_mismatch_and_bad_inputs() {
        let model = TravelModel::Graph(line_graph());
        assert!(model.travel_cost(&Location::Node(0), &Location::geo(0.0, 0.0)).is_err());
        assert!(model.travel_cost(&Location::Node(0), &Location::Node(9)).is_err());
        assert!(RoadGraph::new(2, &[(0, 1, 0.0)]).is_err());
        assert!(TravelModel::geodesic(0.0).is_err());
    }

    #[test]
    fn route_cost_sums_legs() {
        let model = TravelModel::Graph(line_graph());
        let n = Location::Node;
        assert_eq!(model.route_cost(&[n(1)]).unwrap(), 0);
        assert_eq!(model.route_cost(&[n(0), n(3), n(1)]).unwrap(), 6_000 + 5_000);
    }

    #[test]
    fn parses_graph_file() {
        let text = "# tiny\n3 2\n0 1 1.5\n1 2 2\n";
        let g = RoadGraph::parse(text.as_bytes()).unwrap();
        assert_eq!(g.node_count(), 3);
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.cost(0, 2).unwrap(), 3_500);
        assert!(RoadGraph::parse("3 3\n0 1 1\n".as_bytes()).is_err());
        assert!(RoadGraph::parse("3\n".as_bytes()).is_err());
    }

    /// Bellman-Ford relaxation, kept independent of the Dijkstra table.
    fn bellman_ford(n: usize, edges: &[(u32, u32, f64)], src: usize) -> Vec<Option<Millis>> {
        let mut d: Vec<Option<Millis>> = vec![None; n];
        d[src] = Some(0);
        for _ in 0..n {
            for &(u, v, w) in edges {
                let w = crate::time::secs_to_ms(w);
                for (a, b) in [(u as usize, v as usize), (v as usize, u as usize)] {
                    if let Some(da) = d[a] {
                        if d[b].map_or(true, |db| da + w < db) {
                            d[b] = Some(da + w);
                        }
                    }
                }
            }
        }
        d
    }

    #[test]
    fn random_routes_match_bellman_ford_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.gen_range(5..30);
            let mut edges = Vec::new();
            for v in 1..n {
                edges.push((rng.gen_range(0..v) as u32, v as u32, rng.gen_range(1..100) as f64));
            }
            for _ in 0..n {
                let u = rng.gen_range(0..n) as u32;
                let v = rng.gen_range(0..n) as u32;
                if u != v {
                    edges.push((u, v, rng.gen_range(1..100) as f64));
                }
            }
            let model = TravelModel::Graph(RoadGraph::new(n, &edges).unwrap());
            let stops: Vec<u32> = (0..5).map(|_| rng.gen_range(0..n) as u32).collect();
            let expected: Millis = stops
                .windows(2)
                .map(|w| bellman_ford(n, &edges, w[0] as usize)[w[1] as usize].unwrap())
                .sum();
            let locs: Vec<Location> = stops.iter().map(|&s| Location::Node(s)).collect();
            assert_eq!(model.route_cost(&locs).unwrap(), expected);
        }
    }

    #[test]
    fn graph_costs_are_symmetric_and_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 25;
        let mut edges = Vec::new();
        for v in 1..n {
            edges.push((rng.gen_range(0..v) as u32, v as u32, rng.gen_range(1..50) as f64));
        }
        let g = RoadGraph::new(n, &edges).unwrap();
        for a in 0..n as u32 {
            for b in 0..n as u32 {
                assert_eq!(g.cost(a, b).unwrap(), g.cost(b, a).unwrap());
                for c in 0..n as u32 {
                    assert!(g.cost(a, c).unwrap() <= g.cost(a, b).unwrap() + g.cost(b, c).unwrap());
                }
            }
        }
    }

    fn worker(id: u32, loc: Location, idle: bool) -> Worker {
        let mut w = Worker::new(WorkerId(id), loc, 3);
        if !idle {
            w.availability = Availability::Busy { free_at: 10, free_loc: loc };
        }
        w
    }

    #[test]
    fn nearest_worker_edge_cases() {
        let model = TravelModel::geodesic(10.0).unwrap();
        let here = Location::geo(104.0, 30.6);
        assert_eq!(nearest_idle_worker(&model, None, &here, &[]), None);
        let busy = [worker(0, here, false)];
        assert_eq!(nearest_idle_worker(&model, None, &here, &busy), None);
        let far = [worker(4, Location::geo(104.2, 30.7), true)];
        assert_eq!(nearest_idle_worker(&model, None, &here, &far), Some(WorkerId(4)));
        // equal distance: lowest id wins
        let tie = [
            worker(0, Location::geo(104.01, 30.6), true),
            worker(1, Location::geo(103.99, 30.6), true),
        ];
        assert_eq!(nearest_idle_worker(&model, None, &here, &tie), Some(WorkerId(0)));
    }

    #[test]
    fn hundred_random_workers_match_linear_scan() {
        let model = TravelModel::geodesic(10.0).unwrap();
        let bbox = BoundingBox::new(104.0, 30.5, 104.2, 30.7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let workers: Vec<Worker> = (0..100)
                .map(|i| {
                    let loc = Location::geo(rng.gen_range(104.0..104.2), rng.gen_range(30.5..30.7));
                    worker(i, loc, rng.gen_bool(0.7))
                })
                .collect();
            let mut index = GridIndex::new(bbox, 10);
            for w in workers.iter().filter(|w| w.is_idle()) {
                index.insert(w.id.0 as usize, &w.location);
            }
            let q = Location::geo(rng.gen_range(104.0..104.2), rng.gen_range(30.5..30.7));
            let fast = nearest_idle_worker(&model, Some(&index), &q, &workers);
            let slow = workers
                .iter()
                .filter(|w| w.is_idle())
                .map(|w| (model.travel_cost(&w.location, &q).unwrap(), w.id))
                .min()
                .map(|(_, id)| id);
            assert_eq!(fast, slow);
        }
    }
}
