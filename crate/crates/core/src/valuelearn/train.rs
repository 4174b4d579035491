//! Value-network training by replaying the dispatch simulation.
//!
//! Each epoch runs one episode over the training orders. A [`TrainingPolicy`]
//! makes the dispatch decisions and turns every order's life into
//! transitions; the replay memory then feeds a fixed number of minibatch
//! updates. During the warm epochs thresholds come from the fitted mixture
//! rather than the untrained network.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::features::{state_dim, StateVector};
use super::net::{loss_and_grad, Adam, EnvCache, LossConfig, NetError, ValueNet};
use super::replay::{Action, ReplayBuffer, ReplayMemory, Transition};
use crate::domain::{Order, OrderId, RejectedRecord, ServedRecord, Worker};
use crate::simharness::{
    grid_for, run_simulation, DecisionInput, Policy, PolicyChoice, SimConfig, SimError, Terminal,
};
use crate::spatial::{GridIndex, TravelModel};
use crate::strategy::{
    earliest_timeout, make_decision, mean_threshold, theta_from_value, Decision, DecisionStrategy, DispatchCause,
    StrategyKind,
};
use crate::thresholdopt::{optimal_theta, GmmModel};
use crate::time::{Millis, MS_PER_SEC};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no orders to train on")]
    EmptyLog,
    #[error("a mixture model is required for warm epochs and the target loss")]
    NoMixture,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// How actions are chosen once thresholds come from the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionMode {
    /// `p - V(s)` is the threshold of the usual threshold rule.
    Threshold,
    /// Dispatch when the immediate return beats waiting one more slot.
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Leading epochs whose thresholds come from the mixture model.
    pub warm_epochs: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub memory_capacity: usize,
    /// Updates between target-network refreshes.
    pub sync_every: usize,
    pub updates_per_epoch: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub omega: f64,
    pub gamma: f64,
    /// Attach mixture thresholds to transitions for the target loss.
    pub target_loss: bool,
    pub decision: DecisionMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            warm_epochs: 100,
            hidden: vec![128, 128],
            learning_rate: 1e-3,
            batch_size: 256,
            memory_capacity: 100_000,
            sync_every: 1000,
            updates_per_epoch: 50,
            epsilon_start: 0.3,
            epsilon_end: 0.01,
            omega: 0.5,
            gamma: 1.0,
            target_loss: true,
            decision: DecisionMode::Threshold,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty with positive widths");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.memory_capacity == 0 || self.sync_every == 0 {
            return bad("batch_size, memory_capacity and sync_every must be positive");
        }
        for e in [self.epsilon_start, self.epsilon_end] {
            if !(0.0..=1.0).contains(&e) {
                return bad("epsilon must lie in [0, 1]");
            }
        }
        if !(0.0..=1.0).contains(&self.omega) {
            return bad("omega must lie in [0, 1]");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        Ok(())
    }

    /// Exploration rate of `epoch`, linear from start to end.
    pub fn epsilon(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.epsilon_start;
        }
        let f = epoch.min(self.epochs - 1) as f64 / (self.epochs - 1) as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * f
    }
}

/// Where an episode's thresholds come from.
#[derive(Clone, Copy)]
pub enum EpisodeThresholds<'a> {
    Mixture(&'a GmmModel),
    Net(&'a ValueNet, DecisionMode),
}

/// Decision counts of one episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DecisionStats {
    /// Decisions not forced by a closed watching window.
    pub free: u64,
    pub free_dispatches: u64,
    pub explored: u64,
    pub forced: u64,
}

/// Policy that records every order's trajectory as transitions.
pub struct TrainingPolicy<'a> {
    thresholds: EpisodeThresholds<'a>,
    target: Option<&'a GmmModel>,
    strategy: DecisionStrategy,
    epsilon: f64,
    gamma: f64,
    slot: Millis,
    rng: ChaCha8Rng,
    cache: EnvCache,
    buffer: ReplayBuffer,
    transitions: Vec<Transition>,
    stats: DecisionStats,
    mixture_memo: BTreeMap<OrderId, f64>,
}

impl<'a> TrainingPolicy<'a> {
    pub fn new(
        thresholds: EpisodeThresholds<'a>,
        target: Option<&'a GmmModel>,
        sim: &SimConfig,
        epsilon: f64,
        gamma: f64,
        seed: u64,
    ) -> Self {
        let mut strategy = sim.decision_strategy();
        strategy.kind = StrategyKind::Threshold;
        TrainingPolicy {
            thresholds,
            target,
            strategy,
            epsilon,
            gamma,
            slot: sim.slot_ms(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            cache: EnvCache::default(),
            buffer: ReplayBuffer::new(),
            transitions: Vec::new(),
            stats: DecisionStats::default(),
            mixture_memo: BTreeMap::new(),
        }
    }

    pub fn stats(&self) -> DecisionStats {
        self.stats
    }

    /// Transitions in the order they were finished. The buffer is empty once
    /// the episode has run to completion.
    pub fn into_transitions(self) -> (Vec<Transition>, DecisionStats, usize) {
        (self.transitions, self.stats, self.buffer.live_count())
    }

    fn mixture_theta(&mut self, model: &GmmModel, o: &Order) -> f64 {
        *self.mixture_memo.entry(o.id).or_insert_with(|| {
            let p = o.penalty();
            (optimal_theta(model, p as f64 / MS_PER_SEC as f64) * MS_PER_SEC as f64).clamp(0.0, p as f64)
        })
    }

    fn target_of(&mut self, o: &Order) -> Option<f64> {
        self.target.map(|m| self.mixture_theta(m, o))
    }

    fn base_choice(&mut self, input: &DecisionInput<'_>) -> Result<PolicyChoice, SimError> {
        let states = input.states.ok_or(crate::strategy::StrategyError::NoState)?;
        let thetas: Vec<Option<f64>> = match self.thresholds {
            EpisodeThresholds::Mixture(m) => input.members.iter().map(|o| Some(self.mixture_theta(m, o))).collect(),
            EpisodeThresholds::Net(net, DecisionMode::Threshold) => input
                .members
                .iter()
                .zip(states)
                .map(|(o, s)| Some(theta_from_value(o.penalty(), net.value_cached(s, &mut self.cache))))
                .collect(),
            EpisodeThresholds::Net(net, DecisionMode::Greedy) => {
                let mut now = 0.0;
                let mut later = 0.0;
                for (o, s) in input.members.iter().zip(states) {
                    let detour = input.route.legs.iter().find(|l| l.order == o.id).map_or(0, |l| l.detour);
                    now += (o.penalty() - detour) as f64 / MS_PER_SEC as f64;
                    later += -(self.slot as f64) / MS_PER_SEC as f64
                        + self.gamma * net.value_cached(&s.waited_one_more(), &mut self.cache);
                }
                let decision = if now >= later { Decision::Dispatch(DispatchCause::Online) } else { Decision::Hold };
                return Ok(PolicyChoice { decision, mean_theta_ms: None });
            }
        };
        let decision = make_decision(&self.strategy, input.members, input.route, input.t, &thetas)?;
        Ok(PolicyChoice { decision, mean_theta_ms: Some(mean_threshold(input.members, &thetas)?) })
    }
}

impl Policy for TrainingPolicy<'_> {
    fn decide(&mut self, input: &DecisionInput<'_>) -> Result<PolicyChoice, SimError> {
        if input.t > earliest_timeout(input.members) {
            self.stats.forced += 1;
            return Ok(PolicyChoice { decision: Decision::Dispatch(DispatchCause::Timeout), mean_theta_ms: None });
        }
        let mut choice = self.base_choice(input)?;
        self.stats.free += 1;
        if self.epsilon > 0.0 && self.rng.gen::<f64>() < self.epsilon {
            self.stats.explored += 1;
            let dispatch = self.rng.gen::<bool>();
            if dispatch != matches!(choice.decision, Decision::Dispatch(_)) {
                // exploratory dispatches carry no threshold bound
                choice = if dispatch {
                    PolicyChoice { decision: Decision::Dispatch(DispatchCause::Online), mean_theta_ms: None }
                } else {
                    PolicyChoice { decision: Decision::Hold, mean_theta_ms: choice.mean_theta_ms }
                };
            }
        }
        if matches!(choice.decision, Decision::Dispatch(_)) {
            self.stats.free_dispatches += 1;
        }
        Ok(choice)
    }

    fn wants_states(&self) -> bool {
        true
    }

    fn on_arrive(&mut self, order: &Order) {
        self.buffer.begin(order.id, order.release);
    }

    fn on_wait(&mut self, order: &Order, t: Millis, state: &StateVector) {
        let target = self.target_of(order);
        let sink = &mut self.transitions;
        self.buffer.wait(order.id, t, state.clone(), order.penalty(), target, &mut |tr| sink.push(tr));
    }

    fn on_terminal(&mut self, order: &Order, t: Millis, state: &StateVector, end: Terminal) {
        let p = order.penalty();
        let (action, outcome) = match end {
            Terminal::Dispatched { detour, .. } => (Action::Dispatch, p - detour),
            // the waiting already charged brings the total to -p
            Terminal::Rejected => (Action::Wait, (t - order.release) - p),
        };
        let target = self.target_of(order);
        self.mixture_memo.remove(&order.id);
        let sink = &mut self.transitions;
        self.buffer.replace_terminate(order.id, t, state.clone(), action, outcome, p, target, &mut |tr| sink.push(tr));
    }
}

/// Everything one episode produced.
#[derive(Debug, Clone)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub stats: DecisionStats,
    /// Sum of all transition rewards divided by the order count, in seconds.
    pub mean_return_s: f64,
    pub served: Vec<ServedRecord>,
    pub rejected: Vec<RejectedRecord>,
}

/// Runs one episode and collects its transitions.
#[allow(clippy::too_many_arguments)]
pub fn collect_episode(
    orders: &[Order],
    workers: &[Worker],
    model: &TravelModel,
    grid: &GridIndex,
    sim: &SimConfig,
    thresholds: EpisodeThresholds<'_>,
    target: Option<&GmmModel>,
    epsilon: f64,
    gamma: f64,
    seed: u64,
) -> Result<Episode, TrainError> {
    if orders.is_empty() {
        return Err(TrainError::EmptyLog);
    }
    let mut policy = TrainingPolicy::new(thresholds, target, sim, epsilon, gamma, seed);
    let out = run_simulation(orders, workers.to_vec(), model, grid, sim, &mut policy)?;
    let (transitions, stats, live) = policy.into_transitions();
    debug_assert_eq!(live, 0, "every order ends its episode");
    let total: Millis = transitions.iter().map(|t| t.reward_ms).sum();
    let mean_return_s = total as f64 / MS_PER_SEC as f64 / orders.len() as f64;
    Ok(Episode { transitions, stats, mean_return_s, served: out.served, rejected: out.rejected })
}

/// Per-feature input magnitudes and an output range matched to `orders`.
pub fn fit_scaling(net: &mut ValueNet, orders: &[Order], workers: usize, sim: &SimConfig) {
    let cells = net.cells();
    let slot = sim.slot_ms().max(1) as f64;
    let span = orders.last().map_or(0, |o| o.release) - orders.first().map_or(0, |o| o.release);
    let mean_p = orders.iter().map(|o| o.penalty() as f64).sum::<f64>() / orders.len().max(1) as f64;
    let max_p = orders.iter().map(|o| o.penalty()).max().unwrap_or(0) as f64;
    // demand and supply enter as shares of their expected totals: pending
    // orders are about arrival rate times wait, idle workers at most the fleet
    let rate = orders.len() as f64 / (span.max(1) as f64);
    let pending = (rate * mean_p).max(1.0);
    let idle = (workers as f64).max(1.0);
    let mut scale = vec![1.0; state_dim(cells)];
    scale[2 * cells] = (span as f64 / slot).max(1.0);
    scale[2 * cells + 1] = (max_p / slot).max(1.0);
    for s in &mut scale[2 * cells + 2..4 * cells + 2] {
        *s = pending;
    }
    for s in &mut scale[4 * cells + 2..] {
        *s = idle;
    }
    // values mostly sit a little below p, so centre the output on it
    let n = orders.len().max(1) as f64;
    let var_p = orders.iter().map(|o| (o.penalty() as f64 - mean_p).powi(2)).sum::<f64>() / n;
    let ms = MS_PER_SEC as f64;
    net.set_scaling(scale, (0.5 * var_p.sqrt() / ms).max(1.0), mean_p / ms);
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub warm: bool,
    pub epsilon: f64,
    pub mean_return_s: f64,
    pub mean_loss: f64,
    pub transitions: usize,
    pub decisions: DecisionStats,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ValueNet,
    pub epochs: Vec<EpochStats>,
}

/// Trains a value network on `orders` served by `workers`.
pub fn train(
    orders: &[Order],
    workers: &[Worker],
    model: &TravelModel,
    sim: &SimConfig,
    mixture: Option<&GmmModel>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if orders.is_empty() {
        return Err(TrainError::EmptyLog);
    }
    cfg.validate()?;
    sim.validate().map_err(SimError::from)?;
    if mixture.is_none() && (cfg.warm_epochs > 0 || cfg.target_loss) {
        return Err(TrainError::NoMixture);
    }
    let grid = grid_for(orders, sim);
    let mut net = ValueNet::new(grid.cell_count(), &cfg.hidden, cfg.seed);
    fit_scaling(&mut net, orders, workers.len(), sim);
    let mut target_net = net.clone();
    let mut adam = Adam::new(net.param_count(), cfg.learning_rate);
    let mut memory = ReplayMemory::new(cfg.memory_capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let loss_cfg = LossConfig {
        omega: if cfg.target_loss { cfg.omega } else { 1.0 },
        gamma: cfg.gamma,
        slot_ms: sim.slot_ms(),
    };
    let target_theta = if cfg.target_loss { mixture } else { None };
    let mut updates = 0usize;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let warm = epoch < cfg.warm_epochs;
        let epsilon = cfg.epsilon(epoch);
        let thresholds = match (warm, mixture) {
            (true, Some(m)) => EpisodeThresholds::Mixture(m),
            _ => EpisodeThresholds::Net(&net, cfg.decision),
        };
        let seed = cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(epoch as u64);
        let ep = collect_episode(orders, workers, model, &grid, sim, thresholds, target_theta, epsilon, cfg.gamma, seed)?;
        let n_transitions = ep.transitions.len();
        for t in ep.transitions {
            memory.push(t);
        }
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for _ in 0..cfg.updates_per_epoch {
            let batch = memory.sample(&mut rng, cfg.batch_size);
            if batch.is_empty() {
                break;
            }
            let (loss, grad) = loss_and_grad(&net, &target_net, &batch, &loss_cfg)?;
            adam.step(&mut net, &grad);
            loss_sum += loss;
            steps += 1;
            updates += 1;
            if updates % cfg.sync_every == 0 {
                target_net.copy_params_from(&net);
            }
        }
        net.epoch = epoch as u64 + 1;
        log::info!("epoch {epoch}: return {:.2} s, loss {:.3}", ep.mean_return_s, loss_sum / steps.max(1) as f64);
        epochs.push(EpochStats {
            epoch,
            warm,
            epsilon,
            mean_return_s: ep.mean_return_s,
            mean_loss: loss_sum / steps.max(1) as f64,
            transitions: n_transitions,
            decisions: ep.stats,
        });
    }
    Ok(TrainOutcome { net, epochs })
}
