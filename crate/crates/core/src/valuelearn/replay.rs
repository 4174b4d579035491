//! Experience bookkeeping: open wait transitions per order and the replay memory.
//!
//! A wait transition cannot be finished until the order's next decision, which
//! supplies both the next state and the reward (minus the time elapsed since
//! the last decision, or since release for the first one). A terminal decision
//! closes the open transition and adds a final one whose reward is the
//! outcome value minus any elapsed time not yet charged.

use std::collections::{BTreeMap, VecDeque};

use rand::Rng;

use super::features::StateVector;
use crate::domain::OrderId;
use crate::time::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Wait = 0,
    Dispatch = 1,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub order: OrderId,
    pub state: StateVector,
    pub action: Action,
    pub reward_ms: Millis,
    /// `None` marks a terminal transition.
    pub next: Option<StateVector>,
    /// Time from `state` to `next`.
    pub elapsed_ms: Millis,
    pub penalty_ms: Millis,
    /// Reference threshold for the target loss.
    pub theta_target_ms: Option<f64>,
}

impl Transition {
    pub fn is_terminal(&self) -> bool {
        self.next.is_none()
    }
}

/// Bounded FIFO of finished transitions.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    items: VecDeque<Transition>,
    capacity: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        ReplayMemory { items: VecDeque::with_capacity(capacity.min(1 << 16)), capacity: capacity.max(1) }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample<'a>(&'a self, rng: &mut impl Rng, n: usize) -> Vec<&'a Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect()
    }
}

#[derive(Debug, Clone)]
struct Open {
    state: StateVector,
    at: Millis,
    penalty_ms: Millis,
    theta_target_ms: Option<f64>,
}

/// Open wait transitions and the time each live order has been charged up to.
#[derive(Debug, Clone, Default)]
pub struct ReplayBuffer {
    open: BTreeMap<OrderId, Open>,
    charged_until: BTreeMap<OrderId, Millis>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        ReplayBuffer::default()
    }

    /// Starts charging waiting time for an order released at `release`.
    pub fn begin(&mut self, order: OrderId, release: Millis) {
        self.charged_until.insert(order, release);
    }

    pub fn open_count(&self) -> usize {
        self.open.len()
    }

    pub fn live_count(&self) -> usize {
        self.charged_until.len()
    }

    fn close_open(&mut self, order: OrderId, t: Millis, next: &StateVector, sink: &mut dyn FnMut(Transition)) {
        if let Some(open) = self.open.remove(&order) {
            let charged = self.charged_until.get_mut(&order).expect("open transition implies a live order");
            let reward_ms = -(t - *charged);
            *charged = t;
            sink(Transition {
                order,
                state: open.state,
                action: Action::Wait,
                reward_ms,
                next: Some(next.clone()),
                elapsed_ms: t - open.at,
                penalty_ms: open.penalty_ms,
                theta_target_ms: open.theta_target_ms,
            });
        }
    }

    /// Records a wait decision in `state` at `t`, finishing the previous one.
    pub fn wait(
        &mut self,
        order: OrderId,
        t: Millis,
        state: StateVector,
        penalty_ms: Millis,
        theta_target_ms: Option<f64>,
        sink: &mut dyn FnMut(Transition),
    ) {
        self.close_open(order, t, &state, sink);
        self.charged_until.entry(order).or_insert(t);
        self.open.insert(order, Open { state, at: t, penalty_ms, theta_target_ms });
    }

    /// Finishes the order's open transition with `state` as its next state,
    /// then emits the terminal transition. `outcome_ms` is the terminal value
    /// before charging any waiting time not yet charged.
    #[allow(clippy::too_many_arguments)]
    pub fn replace_terminate(
        &mut self,
        order: OrderId,
        t: Millis,
        state: StateVector,
        action: Action,
        outcome_ms: Millis,
        penalty_ms: Millis,
        theta_target_ms: Option<f64>,
        sink: &mut dyn FnMut(Transition),
    ) {
        self.close_open(order, t, &state, sink);
        let charged = self.charged_until.remove(&order).unwrap_or(t);
        sink(Transition {
            order,
            state,
            action,
            reward_ms: outcome_ms - (t - charged),
            next: None,
            elapsed_ms: 0,
            penalty_ms,
            theta_target_ms,
        });
    }
}

/// [`ReplayBuffer::replace_terminate`] flushing straight into `memory`.
#[allow(clippy::too_many_arguments)]
pub fn replace_terminate(
    buffer: &mut ReplayBuffer,
    memory: &mut ReplayMemory,
    order: OrderId,
    t: Millis,
    state: StateVector,
    action: Action,
    outcome_ms: Millis,
    penalty_ms: Millis,
) {
    buffer.replace_terminate(order, t, state, action, outcome_ms, penalty_ms, None, &mut |tr| memory.push(tr));
}
