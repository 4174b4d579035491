//! Learning a state-value function whose complement to the penalty serves as
//! each order's expected threshold.

pub mod features;
pub mod net;
pub mod replay;
pub mod reward;
pub mod train;

pub use features::{featurize, state_dim, DemandSupply, EnvSnapshot, StateVector};
pub use net::{loss_and_grad, Adam, EnvCache, LossConfig, ValueNet};
pub use replay::{replace_terminate, Action, ReplayBuffer, ReplayMemory, Transition};
pub use reward::{accumulated_reward, Outcome};
pub use train::{
    collect_episode, fit_scaling, train, DecisionMode, DecisionStats, Episode, EpisodeThresholds, EpochStats, TrainConfig,
    TrainError, TrainOutcome, TrainingPolicy,
};
