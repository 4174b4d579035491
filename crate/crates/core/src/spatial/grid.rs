use serde::{Deserialize, Serialize};

use super::{Location, EARTH_RADIUS_M};
use crate::time::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lon: f64,
    pub min_lat: f64,
    pub max_lon: f64,
    pub max_lat: f64,
}

impl BoundingBox {
    pub fn new(min_lon: f64, min_lat: f64, max_lon: f64, max_lat: f64) -> Self {
        BoundingBox { min_lon, min_lat, max_lon, max_lat }
    }

    /// Smallest box around the geodesic points, widened by `margin` of its span
    /// on every side. Returns `None` when there are no geodesic points.
    pub fn around<'a>(points: impl IntoIterator<Item = &'a Location>, margin: f64) -> Option<Self> {
        let mut bbox: Option<BoundingBox> = None;
        for p in points {
            if let Location::Geo { lon, lat } = *p {
                let b = bbox.get_or_insert(BoundingBox::new(lon, lat, lon, lat));
                b.min_lon = b.min_lon.min(lon);
                b.max_lon = b.max_lon.max(lon);
                b.min_lat = b.min_lat.min(lat);
                b.max_lat = b.max_lat.max(lat);
            }
        }
        bbox.map(|b| {
            // a degenerate span still needs a usable cell size
            let dx = (b.max_lon - b.min_lon).max(1e-6) * margin;
            let dy = (b.max_lat - b.min_lat).max(1e-6) * margin;
            BoundingBox::new(b.min_lon - dx, b.min_lat - dy, b.max_lon + dx, b.max_lat + dy)
        })
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.min_lon && lon <= self.max_lon && lat >= self.min_lat && lat <= self.max_lat
    }
}

/// Uniform `n x n` bucketing of the bounding box.
///
/// Graph-mode locations have no coordinates; they are spread over the cells
/// by node id so featurization still works on small test networks.
#[derive(Debug, Clone)]
pub struct GridIndex {
    bbox: BoundingBox,
    n: usize,
    buckets: Vec<Vec<usize>>,
    // entity -> (cell, clamped into the box)
    slot: Vec<Option<(usize, bool)>>,
    outside: usize,
}

impl GridIndex {
    pub fn new(bbox: BoundingBox, n: usize) -> Self {
        assert!(n > 0, "grid needs at least one cell per side");
        GridIndex { bbox, n, buckets: vec![Vec::new(); n * n], slot: Vec::new(), outside: 0 }
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    pub fn cells_per_side(&self) -> usize {
        self.n
    }

    pub fn cell_count(&self) -> usize {
        self.n * self.n
    }

    fn axis(&self, v: f64, lo: f64, hi: f64) -> usize {
        let t = ((v - lo) / (hi - lo) * self.n as f64).floor();
        (t.max(0.0) as usize).min(self.n - 1)
    }

    fn col_row(&self, lon: f64, lat: f64) -> (usize, usize) {
        let b = &self.bbox;
        (self.axis(lon, b.min_lon, b.max_lon), self.axis(lat, b.min_lat, b.max_lat))
    }

    /// Cell of a location; points outside the box clamp to the nearest edge cell.
    pub fn cell_of(&self, loc: &Location) -> usize {
        match *loc {
            Location::Geo { lon, lat } => {
                if !self.bbox.contains(lon, lat) {
                    log::debug!("{loc} lies outside the grid bounding box; clamped");
                }
                let (c, r) = self.col_row(lon, lat);
                r * self.n + c
            }
            Location::Node(id) => id as usize % self.cell_count(),
        }
    }

    pub fn len(&self) -> usize {
        self.slot.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.slot.iter().all(Option::is_none)
    }

    pub fn contains(&self, id: usize) -> bool {
        self.slot.get(id).map_or(false, Option::is_some)
    }

    /// Indexes entity `id` at `loc`, moving it if already present.
    pub fn insert(&mut self, id: usize, loc: &Location) {
        self.remove(id);
        if id >= self.slot.len() {
            self.slot.resize(id + 1, None);
        }
        let cell = self.cell_of(loc);
        let clamped = match *loc {
            Location::Geo { lon, lat } => !self.bbox.contains(lon, lat),
            Location::Node(_) => true,
        };
        self.outside += clamped as usize;
        self.buckets[cell].push(id);
        self.slot[id] = Some((cell, clamped));
    }

    pub fn remove(&mut self, id: usize) -> bool {
        let Some((cell, clamped)) = self.slot.get_mut(id).and_then(Option::take) else {
            return false;
        };
        self.outside -= clamped as usize;
        let bucket = &mut self.buckets[cell];
        if let Some(pos) = bucket.iter().position(|&e| e == id) {
            bucket.swap_remove(pos);
        }
        true
    }

    pub fn bucket(&self, cell: usize) -> &[usize] {
        &self.buckets[cell]
    }

    /// Entities in cells within Chebyshev distance `radius` of `loc`'s cell.
    pub fn ring_neighbors(&self, loc: &Location, radius: usize) -> impl Iterator<Item = usize> + '_ {
        let cell = self.cell_of(loc);
        let (cx, cy) = (cell % self.n, cell / self.n);
        let (x0, x1) = (cx.saturating_sub(radius), (cx + radius).min(self.n - 1));
        let (y0, y1) = (cy.saturating_sub(radius), (cy + radius).min(self.n - 1));
        (y0..=y1).flat_map(move |y| (x0..=x1).flat_map(move |x| self.buckets[y * self.n + x].iter().copied()))
    }

    /// Ring search for the entity with the smallest cost returned by `cost`
    /// (`None` = not eligible). Ties go to the lowest entity id. Falls back
    /// to scanning every bucket when clamped points could break the distance
    /// bound.
    pub fn nearest(
        &self,
        speed_mps: f64,
        loc: &Location,
        cost: impl Fn(usize) -> Option<Millis>,
    ) -> Option<(usize, Millis)> {
        let mut best: Option<(Millis, usize)> = None;
        let consider = |id: usize, best: &mut Option<(Millis, usize)>| {
            if let Some(c) = cost(id) {
                if best.map_or(true, |b| (c, id) < b) {
                    *best = Some((c, id));
                }
            }
        };
        let Location::Geo { lon, lat } = *loc else {
            for bucket in &self.buckets {
                for &id in bucket {
                    consider(id, &mut best);
                }
            }
            return best.map(|(c, id)| (id, c));
        };
        let exact_bound = self.outside == 0 && self.bbox.contains(lon, lat);
        let (cx, cy) = self.col_row(lon, lat);
        let max_r = self.n;
        for r in 0..=max_r {
            let (x0, x1) = (cx as isize - r as isize, cx as isize + r as isize);
            let (y0, y1) = (cy as isize - r as isize, cy as isize + r as isize);
            for y in y0..=y1 {
                if y < 0 || y >= self.n as isize {
                    continue;
                }
                for x in x0..=x1 {
                    if x < 0 || x >= self.n as isize {
                        continue;
                    }
                    let on_ring = y == y0 || y == y1 || x == x0 || x == x1;
                    if !on_ring {
                        continue;
                    }
                    for &id in &self.buckets[y as usize * self.n + x as usize] {
                        consider(id, &mut best);
                    }
                }
            }
            let covers_all = x0 <= 0 && y0 <= 0 && x1 >= self.n as isize - 1 && y1 >= self.n as isize - 1;
            if covers_all {
                break;
            }
            if exact_bound {
                if let Some((c, _)) = best {
                    let bound_m = self.outside_distance_m(lon, lat, x0, x1, y0, y1);
                    let bound_ms = (bound_m * 1_000.0 / speed_mps - 1e-3).floor() as Millis;
                    if c < bound_ms {
                        break;
                    }
                }
            }
        }
        best.map(|(c, id)| (id, c))
    }

    /// Lower bound on the great-circle distance from (lon, lat) to any point of
    /// the box that lies outside the covered block of cells.
    fn outside_distance_m(&self, lon: f64, lat: f64, x0: isize, x1: isize, y0: isize, y1: isize) -> f64 {
        let b = &self.bbox;
        let cw = (b.max_lon - b.min_lon) / self.n as f64;
        let ch = (b.max_lat - b.min_lat) / self.n as f64;
        let mut bound = f64::INFINITY;
        let phi = lat.to_radians();
        if x0 > 0 {
            let edge = b.min_lon + x0 as f64 * cw;
            bound = bound.min(meridian_distance_m(phi, (lon - edge).to_radians()));
        }
        if x1 < self.n as isize - 1 {
            let edge = b.min_lon + (x1 + 1) as f64 * cw;
            bound = bound.min(meridian_distance_m(phi, (edge - lon).to_radians()));
        }
        if y0 > 0 {
            let edge = b.min_lat + y0 as f64 * ch;
            bound = bound.min(EARTH_RADIUS_M * (lat - edge).to_radians().abs());
        }
        if y1 < self.n as isize - 1 {
            let edge = b.min_lat + (y1 + 1) as f64 * ch;
            bound = bound.min(EARTH_RADIUS_M * (edge - lat).to_radians().abs());
        }
        bound
    }
}

/// Distance from a point at latitude `phi` to the meridian `dlambda` away.
fn meridian_distance_m(phi: f64, dlambda: f64) -> f64 {
    let s = (dlambda.abs().min(std::f64::consts::FRAC_PI_2).sin() * phi.cos()).clamp(-1.0, 1.0);
    EARTH_RADIUS_M * s.asin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{haversine_m, meters_to_ms};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bbox() -> BoundingBox {
        BoundingBox::new(-74.05, 40.60, -73.75, 40.90)
    }

    #[test]
    fn cell_count_and_clamping() {
        let g = GridIndex::new(bbox(), 10);
        assert_eq!(g.cell_count(), 100);
        assert_eq!(g.cell_of(&Location::geo(-74.05, 40.60)), 0);
        assert_eq!(g.cell_of(&Location::geo(-73.75, 40.90)), 99);
        assert_eq!(g.cell_of(&Location::geo(-80.0, 50.0)), 90);
        let p = Location::geo(-73.9, 40.7);
        assert_eq!(g.cell_of(&p), g.cell_of(&p));
    }

    #[test]
    fn insert_move_remove() {
        let mut g = GridIndex::new(bbox(), 10);
        g.insert(3, &Location::geo(-74.0, 40.65));
        g.insert(3, &Location::geo(-73.8, 40.85));
        assert_eq!(g.len(), 1);
        let total: usize = (0..100).map(|c| g.bucket(c).len()).sum();
        assert_eq!(total, 1);
        assert!(g.remove(3));
        assert!(!g.remove(3));
        assert!(g.is_empty());
    }

    #[test]
    fn bbox_with_margin() {
        let pts = [Location::geo(0.0, 0.0), Location::geo(1.0, 2.0)];
        let b = BoundingBox::around(&pts, 0.01).unwrap();
        assert!((b.min_lon + 0.01).abs() < 1e-12 && (b.max_lat - 2.02).abs() < 1e-12);
        assert!(BoundingBox::around(&[Location::Node(1)], 0.01).is_none());
    }

    #[test]
    fn ring_search_matches_linear_scan_on_random_configurations() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let b = bbox();
        for _ in 0..1000 {
            let n = rng.gen_range(1..15);
            let mut g = GridIndex::new(b, n);
            let count = rng.gen_range(0..40);
            let pts: Vec<(f64, f64)> = (0..count)
                .map(|_| (rng.gen_range(b.min_lon..b.max_lon), rng.gen_range(b.min_lat..b.max_lat)))
                .collect();
            for (i, &(x, y)) in pts.iter().enumerate() {
                g.insert(i, &Location::geo(x, y));
            }
            let q = (rng.gen_range(b.min_lon..b.max_lon), rng.gen_range(b.min_lat..b.max_lat));
            let cost = |i: usize| Some(meters_to_ms(haversine_m(pts[i].0, pts[i].1, q.0, q.1), 10.0));
            let fast = g.nearest(10.0, &Location::geo(q.0, q.1), cost);
            let slow = (0..count).map(|i| (cost(i).unwrap(), i)).min().map(|(c, i)| (i, c));
            assert_eq!(fast, slow);
        }
    }
}
