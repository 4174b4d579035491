//! Simulation harness: order ingestion, fleet generation, the pooling event
//! loop, event logs and metrics.

pub mod audit;
pub mod config;
pub mod engine;
pub mod eventlog;
pub mod ingest;
pub mod metrics;
pub mod scenario;
pub mod synth;
pub mod workers;

use thiserror::Error;

pub use audit::{audit_log, AuditSummary};
pub use config::{ConfigError, SimConfig};
pub use engine::{
    grid_for, run_simulation, simulate, DecisionInput, Policy, PolicyChoice, SimOutcome, StrategyPolicy, Terminal,
};
pub use eventlog::{read_events, write_events, EventKind, EventRow};
pub use ingest::{ingest_orders, orders_from_rows, write_order_rows, IngestStats, OrderRow};
pub use metrics::{report_from_log, totals_from_log, unified_cost, CauseCounts, MetricsReport, Timing, Totals};
pub use synth::{synth_orders, SynthConfig};
pub use workers::{assign_worker, generate_workers, Assignment};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{0}")]
    Input(String),
    #[error("orders must be sorted by release time (order at index {index} is early)")]
    Unsorted { index: usize },
    #[error("event log: {0}")]
    Log(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Spatial(#[from] crate::spatial::SpatialError),
    #[error(transparent)]
    Domain(#[from] crate::domain::DomainError),
    #[error(transparent)]
    Pool(#[from] crate::poolgraph::PoolError),
    #[error(transparent)]
    Routing(#[from] crate::routing::RoutingError),
    #[error(transparent)]
    Strategy(#[from] crate::strategy::StrategyError),
}
