use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::ExtraTimeWeights;
use crate::poolgraph::PoolConfig;
use crate::spatial::{BoundingBox, SpatialError, TravelModel};
use crate::strategy::{DecisionStrategy, StrategyKind};
use crate::time::{secs_to_ms, Millis};

#[derive(Debug, Error, PartialEq)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

/// Simulation parameters. Every field has a default, so a JSON file only
/// needs the keys it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub strategy: StrategyKind,
    /// Weight of detour time in extra time.
    pub alpha: f64,
    /// Weight of response time in extra time.
    pub beta: f64,
    /// Deadline = release + deadline_scale * direct cost.
    pub deadline_scale: f64,
    /// Watching window = wait_scale * direct cost.
    pub wait_scale: f64,
    /// Largest worker capacity; also the group-size cap.
    pub max_capacity: u32,
    pub workers: usize,
    /// Grid cells per side.
    pub grid_cells: usize,
    pub time_slot_s: f64,
    pub check_period_s: f64,
    pub speed_mps: f64,
    pub seed: u64,
    /// Count the worker's approach leg when checking deadlines.
    pub include_approach: bool,
    /// Timeout strategy: dispatch a group whose route would expire before
    /// the next check.
    pub timeout_expiry_guard: bool,
    /// Only probe pooled orders whose pickups lie within this many grid
    /// rings. `null` probes every pending order.
    pub prefilter_ring: Option<usize>,
    /// Region covered by the grid; derived from the orders when absent.
    pub bbox: Option<BoundingBox>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            strategy: StrategyKind::Threshold,
            alpha: 1.0,
            beta: 1.0,
            deadline_scale: 1.6,
            wait_scale: 0.8,
            max_capacity: 3,
            workers: 300,
            grid_cells: 10,
            time_slot_s: 10.0,
            check_period_s: 10.0,
            speed_mps: 10.0,
            seed: 1,
            include_approach: false,
            timeout_expiry_guard: true,
            prefilter_ring: Some(2),
            bbox: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("deadline_scale", self.deadline_scale),
            ("wait_scale", self.wait_scale),
            ("time_slot_s", self.time_slot_s),
            ("check_period_s", self.check_period_s),
            ("speed_mps", self.speed_mps),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError(format!("{name} must be positive, got {v}")));
            }
        }
        if self.deadline_scale <= 1.0 {
            return Err(ConfigError(format!("deadline_scale must exceed 1, got {}", self.deadline_scale)));
        }
        if self.max_capacity < 2 {
            return Err(ConfigError(format!("max_capacity must be at least 2, got {}", self.max_capacity)));
        }
        if self.grid_cells == 0 {
            return Err(ConfigError("grid_cells must be positive".into()));
        }
        if secs_to_ms(self.check_period_s) < 1 || secs_to_ms(self.time_slot_s) < 1 {
            return Err(ConfigError("time_slot_s and check_period_s must be at least 1 ms".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn weights(&self) -> ExtraTimeWeights {
        ExtraTimeWeights { alpha: self.alpha, beta: self.beta }
    }

    pub fn slot_ms(&self) -> Millis {
        secs_to_ms(self.time_slot_s)
    }

    pub fn check_period_ms(&self) -> Millis {
        secs_to_ms(self.check_period_s)
    }

    pub fn pool_config(&self) -> PoolConfig {
        PoolConfig { max_group: self.max_capacity as usize, capacity: self.max_capacity, weights: self.weights() }
    }

    pub fn decision_strategy(&self) -> DecisionStrategy {
        DecisionStrategy {
            kind: self.strategy,
            weights: self.weights(),
            expiry_guard: self.timeout_expiry_guard,
            check_period: self.check_period_ms(),
        }
    }

    pub fn travel_model(&self) -> Result<TravelModel, SpatialError> {
        TravelModel::geodesic(self.speed_mps)
    }
}
