//! Small fully connected value network with manual backpropagation.
//!
//! Inputs are sparse (two one-hot blocks plus mostly-zero region counts), so
//! the first layer is evaluated from the non-zero entries only. Weights are
//! stored input-major (`w[i * out + o]`) so each input's fan-out is contiguous.
//! The network predicts `V` in seconds as `out_scale * y + out_shift`.

use std::io::{self, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::features::{env_nonzeros, state_dim, StateVector};
use super::replay::Transition;
use crate::time::MS_PER_SEC;

const MAGIC: &[u8; 8] = b"WATTRVN1";

#[derive(Debug, Error)]
pub enum NetError {
    #[error("checkpoint: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint: {0}")]
    Format(String),
    #[error("loss weight must lie in [0, 1], got {0}")]
    BadOmega(f64),
    #[error("state has {got} inputs, network expects {want}")]
    DimMismatch { got: usize, want: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet {
    cells: usize,
    sizes: Vec<usize>,
    params: Vec<f64>,
    input_scale: Vec<f64>,
    out_scale: f64,
    out_shift: f64,
    seed: u64,
    pub epoch: u64,
    version: u64,
}

/// Cached first-layer contribution of one environment snapshot.
#[derive(Debug, Clone, Default)]
pub struct EnvCache {
    key: Option<(u64, u64)>,
    partial: Vec<f64>,
}

struct Trace {
    acts: Vec<Vec<f64>>,
    y: f64,
}

impl ValueNet {
    /// He-uniform initialized network for a `cells`-region grid, with a
    /// damped output layer.
    pub fn new(cells: usize, hidden: &[usize], seed: u64) -> Self {
        let mut sizes = vec![state_dim(cells)];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let last = sizes.len() - 2;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            // a small output layer starts every value near the output shift
            let damp = if l == last { 0.1 } else { 1.0 };
            let bound = damp * (6.0 / fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)));
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        ValueNet {
            cells,
            input_scale: vec![1.0; sizes[0]],
            sizes,
            params,
            out_scale: 1.0,
            out_shift: 0.0,
            seed,
            epoch: 0,
            version: 0,
        }
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        self.params.copy_from_slice(params);
        self.version += 1;
    }

    pub fn copy_params_from(&mut self, other: &ValueNet) {
        self.set_params(&other.params);
    }

    /// Sets per-input divisors and the output affine map.
    pub fn set_scaling(&mut self, input_scale: Vec<f64>, out_scale: f64, out_shift: f64) {
        assert_eq!(input_scale.len(), self.input_dim());
        self.input_scale = input_scale.into_iter().map(|s| if s > 0.0 { s } else { 1.0 }).collect();
        self.out_scale = if out_scale > 0.0 { out_scale } else { 1.0 };
        self.out_shift = out_shift;
        self.version += 1;
    }

    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.sizes.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.sizes[l] * self.sizes[l + 1])
    }

    fn first_layer_from(&self, entries: impl Iterator<Item = (usize, f64)>, z: &mut [f64]) {
        let out = self.sizes[1];
        for (i, v) in entries {
            let x = v / self.input_scale[i];
            let row = &self.params[i * out..(i + 1) * out];
            for (zo, w) in z.iter_mut().zip(row) {
                *zo += x * w;
            }
        }
    }

    fn trace(&self, state: &StateVector, cache: Option<&mut EnvCache>) -> Trace {
        let out = self.sizes[1];
        let (_, b0) = self.layer_offsets(0);
        let mut z = self.params[b0..b0 + out].to_vec();
        let c = self.cells;
        let own = [
            (state.pickup_cell, 1.0),
            (c + state.dropoff_cell, 1.0),
            (2 * c, state.release_slot as f64),
            (2 * c + 1, state.waited_slots as f64),
        ];
        self.first_layer_from(own.into_iter().filter(|e| e.1 != 0.0), &mut z);
        match cache {
            Some(cache) => {
                let key = (state.env.id, self.version);
                if cache.key != Some(key) {
                    cache.partial = vec![0.0; out];
                    self.first_layer_from(env_nonzeros(&state.env), &mut cache.partial);
                    cache.key = Some(key);
                }
                for (zo, p) in z.iter_mut().zip(&cache.partial) {
                    *zo += p;
                }
            }
            None => self.first_layer_from(env_nonzeros(&state.env), &mut z),
        }
        let mut acts = Vec::with_capacity(self.sizes.len() - 1);
        let mut a: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
        let layers = self.sizes.len() - 1;
        for l in 1..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let mut z = self.params[b..b + n_out].to_vec();
            for i in 0..n_in {
                let ai = a[i];
                if ai == 0.0 {
                    continue;
                }
                let row = &self.params[w + i * n_out..w + (i + 1) * n_out];
                for (zo, wv) in z.iter_mut().zip(row) {
                    *zo += ai * wv;
                }
            }
            acts.push(a);
            a = if l + 1 == layers { z } else { z.iter().map(|v| v.max(0.0)).collect() };
        }
        Trace { acts, y: a[0] }
    }

    /// `V(s)` in seconds.
    pub fn value(&self, state: &StateVector) -> f64 {
        self.out_scale * self.trace(state, None).y + self.out_shift
    }

    /// `V(s)` reusing the environment part of the first layer across calls.
    pub fn value_cached(&self, state: &StateVector, cache: &mut EnvCache) -> f64 {
        self.out_scale * self.trace(state, Some(cache)).y + self.out_shift
    }

    /// Adds `dv * dV/dparams` into `grad`.
    fn backprop(&self, state: &StateVector, trace: &Trace, dv: f64, grad: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        let mut delta = vec![dv * self.out_scale];
        for l in (1..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (w, b) = self.layer_offsets(l);
            let a = &trace.acts[l - 1];
            for o in 0..n_out {
                grad[b + o] += delta[o];
            }
            let mut prev = vec![0.0; n_in];
            for i in 0..n_in {
                if a[i] == 0.0 {
                    // relu gate closed; no weight gradient either since a_i = 0
                    continue;
                }
                let row = w + i * n_out;
                let mut s = 0.0;
                for o in 0..n_out {
                    grad[row + o] += a[i] * delta[o];
                    s += self.params[row + o] * delta[o];
                }
                prev[i] = s;
            }
            delta = prev;
        }
        let out = self.sizes[1];
        let (_, b0) = self.layer_offsets(0);
        for o in 0..out {
            grad[b0 + o] += delta[o];
        }
        for (i, v) in state.nonzeros() {
            let x = v / self.input_scale[i];
            for o in 0..out {
                grad[i * out + o] += x * delta[o];
            }
        }
    }

    pub fn check_dim(&self, state: &StateVector) -> Result<(), NetError> {
        if state.dim() != self.input_dim() {
            return Err(NetError::DimMismatch { got: state.dim(), want: self.input_dim() });
        }
        Ok(())
    }

    pub fn save(&self, mut w: impl Write) -> Result<(), NetError> {
        w.write_all(MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.cells as u64).to_le_bytes())?;
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for s in &self.sizes {
            w.write_all(&(*s as u64).to_le_bytes())?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.epoch.to_le_bytes())?;
        for v in self.input_scale.iter().chain([&self.out_scale, &self.out_shift]).chain(&self.params) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(mut r: impl Read) -> Result<Self, NetError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(NetError::Format("not a value-net checkpoint".into()));
        }
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(NetError::Format(format!("unsupported version {version}")));
        }
        let cells = read_u64(&mut r)? as usize;
        let n = read_u32(&mut r)? as usize;
        if !(2..=16).contains(&n) {
            return Err(NetError::Format(format!("{n} layer sizes")));
        }
        let sizes = (0..n).map(|_| read_u64(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        if sizes[0] != state_dim(cells) || *sizes.last().unwrap() != 1 || sizes.iter().any(|&s| s == 0 || s > 1 << 20) {
            return Err(NetError::Format(format!("layer sizes {sizes:?} do not fit {cells} cells")));
        }
        let seed = read_u64(&mut r)?;
        let epoch = read_u64(&mut r)?;
        let input_scale = (0..sizes[0]).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>, _>>()?;
        let out_scale = read_f64(&mut r)?;
        let out_shift = read_f64(&mut r)?;
        let count: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let params = (0..count).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>, _>>()?;
        Ok(ValueNet { cells, sizes, params, input_scale, out_scale, out_shift, seed, epoch, version: 0 })
    }
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Weight of the temporal-difference term; the target term gets `1 - omega`.
    pub omega: f64,
    pub gamma: f64,
    pub slot_ms: i64,
}

/// Combined loss over `batch` and its gradient with respect to `net`'s
/// parameters. `target` supplies `V(s')` and is held constant. Transitions
/// without a reference threshold are left out of the target term.
pub fn loss_and_grad(
    net: &ValueNet,
    target: &ValueNet,
    batch: &[&Transition],
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>), NetError> {
    if !(0.0..=1.0).contains(&cfg.omega) {
        return Err(NetError::BadOmega(cfg.omega));
    }
    let mut grad = vec![0.0; net.param_count()];
    if batch.is_empty() {
        return Ok((0.0, grad));
    }
    let n = batch.len() as f64;
    let n_target = batch.iter().filter(|t| t.theta_target_ms.is_some()).count().max(1) as f64;
    let ms = MS_PER_SEC as f64;
    let mut loss = 0.0;
    for tr in batch {
        net.check_dim(&tr.state)?;
        let trace = net.trace(&tr.state, None);
        let v = net.out_scale * trace.y + net.out_shift;
        let mut dv = 0.0;
        if cfg.omega > 0.0 {
            let mut y = tr.reward_ms as f64 / ms;
            if let Some(next) = &tr.next {
                let k = tr.elapsed_ms as f64 / cfg.slot_ms as f64;
                y += cfg.gamma.powf(k) * target.value(next);
            }
            let e = y - v;
            loss += cfg.omega * e * e / n;
            dv += -2.0 * cfg.omega * e / n;
        }
        if cfg.omega < 1.0 {
            if let Some(theta) = tr.theta_target_ms {
                let e = (tr.penalty_ms as f64 - theta) / ms - v;
                loss += (1.0 - cfg.omega) * e * e / n_target;
                dv += -2.0 * (1.0 - cfg.omega) * e / n_target;
            }
        }
        net.backprop(&tr.state, &trace, dv, &mut grad);
    }
    Ok((loss, grad))
}

/// Loss only; used by finite-difference checks.
pub fn loss_value(net: &ValueNet, target: &ValueNet, batch: &[&Transition], cfg: &LossConfig) -> Result<f64, NetError> {
    Ok(loss_and_grad(net, target, batch, cfg)?.0)
}

/// Adam optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(params: usize, lr: f64) -> Self {
        Adam { lr, m: vec![0.0; params], v: vec![0.0; params], t: 0 }
    }

    pub fn step(&mut self, net: &mut ValueNet, grad: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for (i, g) in grad.iter().enumerate() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
            net.params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + 1e-8);
        }
        net.version += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::OrderId;
    use crate::valuelearn::features::EnvSnapshot;
    use crate::valuelearn::replay::Action;
    use std::sync::Arc;

    fn random_state(rng: &mut ChaCha8Rng, cells: usize, id: u64) -> StateVector {
        let env = Arc::new(EnvSnapshot {
            id,
            pickups: (0..cells).map(|_| rng.gen_range(0..4)).collect(),
            dropoffs: (0..cells).map(|_| rng.gen_range(0..4)).collect(),
            idle: (0..cells).map(|_| rng.gen_range(0..3)).collect(),
        });
        StateVector {
            pickup_cell: rng.gen_range(0..cells),
            dropoff_cell: rng.gen_range(0..cells),
            release_slot: rng.gen_range(0..50),
            waited_slots: rng.gen_range(0..10),
            env,
        }
    }

    fn dense_forward(net: &ValueNet, x: &[f64]) -> f64 {
        let mut a: Vec<f64> = x.iter().zip(&net.input_scale).map(|(v, s)| v / s).collect();
        let layers = net.sizes.len() - 1;
        for l in 0..layers {
            let (n_in, n_out) = (net.sizes[l], net.sizes[l + 1]);
            let (w, b) = net.layer_offsets(l);
            let mut z = net.params[b..b + n_out].to_vec();
            for i in 0..n_in {
                for o in 0..n_out {
                    z[o] += a[i] * net.params[w + i * n_out + o];
                }
            }
            a = if l + 1 == layers { z } else { z.into_iter().map(|v| v.max(0.0)).collect() };
        }
        net.out_scale * a[0] + net.out_shift
    }

    #[test]
    fn sparse_forward_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = ValueNet::new(9, &[12, 7], 3);
        net.set_scaling((0..net.input_dim()).map(|_| rng.gen_range(0.5..3.0)).collect(), 40.0, 12.0);
        let mut cache = EnvCache::default();
        let mut s = random_state(&mut rng, 9, 0);
        for i in 0..50 {
            if i % 5 == 0 {
                s = random_state(&mut rng, 9, i / 5);
            } else {
                s.pickup_cell = rng.gen_range(0..9);
                s.waited_slots = rng.gen_range(0..10);
            }
            let dense = dense_forward(&net, &s.to_dense());
            assert!((net.value(&s) - dense).abs() < 1e-9);
            assert!((net.value_cached(&s, &mut cache) - dense).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut net = ValueNet::new(4, &[5, 3], 11);
        net.set_scaling(vec![2.0; net.input_dim()], 3.0, -1.0);
        net.epoch = 17;
        let mut buf = Vec::new();
        net.save(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = ValueNet::load(&buf[..]).unwrap();
        assert_eq!(back.params, net.params);
        assert_eq!(back.epoch, 17);
        assert_eq!(back.sizes, net.sizes);
        assert!(ValueNet::load(&buf[..20]).is_err());
        assert!(ValueNet::load(&b"garbage-garbage-garbage"[..]).is_err());
    }

    fn batch(rng: &mut ChaCha8Rng, cells: usize, n: usize) -> Vec<Transition> {
        (0..n)
            .map(|i| {
                let s = random_state(rng, cells, i as u64);
                let terminal = rng.gen_bool(0.3);
                Transition {
                    order: OrderId(i as u32),
                    next: (!terminal).then(|| s.waited_one_more()),
                    state: s,
                    action: if terminal { Action::Dispatch } else { Action::Wait },
                    reward_ms: rng.gen_range(-20_000..300_000),
                    elapsed_ms: 10_000,
                    penalty_ms: 300_000,
                    theta_target_ms: rng.gen_bool(0.8).then(|| rng.gen_range(0.0..300_000.0)),
                }
            })
            .collect()
    }

    #[test]
    fn omega_bounds_and_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = ValueNet::new(4, &[6, 6], 1);
        let b = batch(&mut rng, 4, 8);
        let refs: Vec<&Transition> = b.iter().collect();
        let cfg = LossConfig { omega: 1.5, gamma: 1.0, slot_ms: 10_000 };
        assert!(loss_and_grad(&net, &net, &refs, &cfg).is_err());
        // omega = 0 and V(s) = p - theta exactly gives zero loss
        let mut tr = b[0].clone();
        let v = net.value(&tr.state);
        tr.theta_target_ms = Some(tr.penalty_ms as f64 - v * 1000.0);
        let cfg = LossConfig { omega: 0.0, gamma: 1.0, slot_ms: 10_000 };
        let (loss, _) = loss_and_grad(&net, &net, &[&tr], &cfg).unwrap();
        assert!(loss < 1e-18, "{loss}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for round in 0..3 {
            let mut net = ValueNet::new(4, &[10, 8], round);
            net.set_scaling((0..net.input_dim()).map(|_| rng.gen_range(1.0..5.0)).collect(), 50.0, 10.0);
            let target = ValueNet::new(4, &[10, 8], 99);
            let b = batch(&mut rng, 4, 16);
            let refs: Vec<&Transition> = b.iter().collect();
            let cfg = LossConfig { omega: 0.5, gamma: 0.9, slot_ms: 10_000 };
            let (_, grad) = loss_and_grad(&net, &target, &refs, &cfg).unwrap();
            let base = net.params.clone();
            for _ in 0..60 {
                let i = rng.gen_range(0..base.len());
                let h = 1e-6 * base[i].abs().max(1e-2);
                let mut p = base.clone();
                p[i] = base[i] + h;
                net.set_params(&p);
                let up = loss_value(&net, &target, &refs, &cfg).unwrap();
                p[i] = base[i] - h;
                net.set_params(&p);
                let down = loss_value(&net, &target, &refs, &cfg).unwrap();
                net.set_params(&base);
                let numeric = (up - down) / (2.0 * h);
                let scale = grad[i].abs().max(numeric.abs());
                if scale < 1e-9 {
                    continue;
                }
                assert!((grad[i] - numeric).abs() / scale < 1e-4, "param {i}: {} vs {numeric}", grad[i]);
            }
        }
    }
}
