//! Per-order MDP state: where the trip goes, when it was released, how long
//! it has waited, and the demand/supply picture around it.

use std::sync::Arc;

use crate::domain::{Order, Worker};
use crate::spatial::GridIndex;
use crate::time::Millis;

/// Region tallies at one instant, shared by every state built at that instant.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSnapshot {
    /// Distinguishes snapshots for per-snapshot caches.
    pub id: u64,
    pub pickups: Vec<u32>,
    pub dropoffs: Vec<u32>,
    pub idle: Vec<u32>,
}

/// Running per-cell counts of pending pickups, pending dropoffs and idle workers.
#[derive(Debug, Clone)]
pub struct DemandSupply {
    pickups: Vec<u32>,
    dropoffs: Vec<u32>,
    idle: Vec<u32>,
    next_id: u64,
}

impl DemandSupply {
    pub fn new(cells: usize) -> Self {
        DemandSupply { pickups: vec![0; cells], dropoffs: vec![0; cells], idle: vec![0; cells], next_id: 0 }
    }

    /// Counts from scratch over a pool and a fleet.
    pub fn tally<'a>(grid: &GridIndex, pool: impl IntoIterator<Item = &'a Order>, workers: &[Worker]) -> Self {
        let mut ds = DemandSupply::new(grid.cell_count());
        for o in pool {
            ds.add_order(grid.cell_of(&o.pickup), grid.cell_of(&o.dropoff));
        }
        for w in workers.iter().filter(|w| w.is_idle()) {
            ds.add_idle(grid.cell_of(&w.location));
        }
        ds
    }

    pub fn cells(&self) -> usize {
        self.idle.len()
    }

    pub fn add_order(&mut self, pickup_cell: usize, dropoff_cell: usize) {
        self.pickups[pickup_cell] += 1;
        self.dropoffs[dropoff_cell] += 1;
    }

    pub fn remove_order(&mut self, pickup_cell: usize, dropoff_cell: usize) {
        self.pickups[pickup_cell] -= 1;
        self.dropoffs[dropoff_cell] -= 1;
    }

    pub fn add_idle(&mut self, cell: usize) {
        self.idle[cell] += 1;
    }

    pub fn remove_idle(&mut self, cell: usize) {
        self.idle[cell] -= 1;
    }

    pub fn snapshot(&mut self) -> Arc<EnvSnapshot> {
        self.next_id += 1;
        Arc::new(EnvSnapshot {
            id: self.next_id,
            pickups: self.pickups.clone(),
            dropoffs: self.dropoffs.clone(),
            idle: self.idle.clone(),
        })
    }
}

/// State of one order. The dense layout is
/// `[pickup one-hot | dropoff one-hot | release slot, waited slots |
/// pending pickups | pending dropoffs | idle workers]`, `5 * cells + 2` long.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub pickup_cell: usize,
    pub dropoff_cell: usize,
    pub release_slot: u32,
    pub waited_slots: u32,
    pub env: Arc<EnvSnapshot>,
}

pub fn state_dim(cells: usize) -> usize {
    5 * cells + 2
}

impl StateVector {
    pub fn cells(&self) -> usize {
        self.env.idle.len()
    }

    pub fn dim(&self) -> usize {
        state_dim(self.cells())
    }

    /// Non-zero entries in ascending index order.
    pub fn nonzeros(&self) -> Vec<(usize, f64)> {
        let c = self.cells();
        let mut out = Vec::with_capacity(8);
        out.push((self.pickup_cell, 1.0));
        out.push((c + self.dropoff_cell, 1.0));
        out.sort_by_key(|e| e.0);
        if self.release_slot > 0 {
            out.push((2 * c, self.release_slot as f64));
        }
        if self.waited_slots > 0 {
            out.push((2 * c + 1, self.waited_slots as f64));
        }
        out.extend(env_nonzeros(&self.env));
        out
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        for (i, v) in self.nonzeros() {
            x[i] = v;
        }
        x
    }

    /// The same order one slot later in the same environment.
    pub fn waited_one_more(&self) -> StateVector {
        StateVector { waited_slots: self.waited_slots + 1, ..self.clone() }
    }
}

/// Non-zero environment entries with their dense indices.
pub fn env_nonzeros(env: &EnvSnapshot) -> impl Iterator<Item = (usize, f64)> + '_ {
    let c = env.idle.len();
    let base = 2 * c + 2;
    env.pickups
        .iter()
        .chain(&env.dropoffs)
        .chain(&env.idle)
        .enumerate()
        .filter(|(_, &v)| v > 0)
        .map(move |(i, &v)| (base + i, v as f64))
}

/// State of `order` at `t_now`; slots are `slot_ms` long.
pub fn featurize(order: &Order, t_now: Millis, grid: &GridIndex, env: &Arc<EnvSnapshot>, slot_ms: Millis) -> StateVector {
    StateVector {
        pickup_cell: grid.cell_of(&order.pickup),
        dropoff_cell: grid.cell_of(&order.dropoff),
        release_slot: (order.release.max(0) / slot_ms) as u32,
        waited_slots: ((t_now - order.release).max(0) / slot_ms) as u32,
        env: Arc::clone(env),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{OrderId, WorkerId};
    use crate::spatial::{BoundingBox, Location};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> GridIndex {
        GridIndex::new(BoundingBox::new(0.0, 0.0, 1.0, 1.0), 10)
    }

    fn order(id: u32, p: (f64, f64), d: (f64, f64), release: Millis) -> Order {
        Order::new(OrderId(id), Location::geo(p.0, p.1), Location::geo(d.0, d.1), 1, release, release + 10_000, 0, 1_000)
            .unwrap()
    }

    #[test]
    fn empty_environment() {
        let g = grid();
        let mut ds = DemandSupply::new(g.cell_count());
        let env = ds.snapshot();
        let o = order(0, (0.05, 0.05), (0.95, 0.95), 25_000);
        let s = featurize(&o, 25_000, &g, &env, 10_000);
        let x = s.to_dense();
        assert_eq!(x.len(), 502);
        assert_eq!(s.waited_slots, 0);
        assert_eq!(s.release_slot, 2);
        assert_eq!(x[..100].iter().sum::<f64>(), 1.0);
        assert_eq!(x[100..200].iter().sum::<f64>(), 1.0);
        assert_eq!(x[0], 1.0);
        assert_eq!(x[199], 1.0);
        assert!(x[202..].iter().all(|&v| v == 0.0));
        assert_eq!(featurize(&o, 49_999, &g, &env, 10_000).waited_slots, 2);
    }

    #[test]
    fn incremental_tallies_match_recount() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let orders: Vec<Order> = (0..200)
            .map(|i| order(i, (rng.gen(), rng.gen()), (rng.gen(), rng.gen()), 0))
            .collect();
        let mut workers: Vec<Worker> = (0..50)
            .map(|i| Worker::new(WorkerId(i), Location::geo(rng.gen(), rng.gen()), 3))
            .collect();
        for w in workers.iter_mut().step_by(3) {
            w.availability = crate::domain::Availability::Busy { free_at: 10, free_loc: w.location };
        }
        let mut ds = DemandSupply::new(g.cell_count());
        for o in &orders {
            ds.add_order(g.cell_of(&o.pickup), g.cell_of(&o.dropoff));
        }
        for o in orders.iter().step_by(2) {
            ds.remove_order(g.cell_of(&o.pickup), g.cell_of(&o.dropoff));
        }
        for w in workers.iter().filter(|w| w.is_idle()) {
            ds.add_idle(g.cell_of(&w.location));
        }
        let pool: Vec<&Order> = orders.iter().skip(1).step_by(2).collect();
        let fresh = DemandSupply::tally(&g, pool.iter().copied(), &workers);
        let (a, b) = (ds.snapshot(), DemandSupply::tally(&g, pool, &workers).snapshot());
        assert_eq!((&a.pickups, &a.dropoffs, &a.idle), (&b.pickups, &b.dropoffs, &b.idle));
        assert_eq!(fresh.cells(), 100);
        // manual per-cell count
        for cell in 0..100 {
            let n = orders.iter().skip(1).step_by(2).filter(|o| g.cell_of(&o.pickup) == cell).count();
            assert_eq!(a.pickups[cell] as usize, n);
        }
    }
}
