//! Deterministic discrete-event simulation of the cluster, its frameworks
//! and their workload.

mod engine;
mod event;
mod metrics;
mod policy;
mod scenario;
mod synth;
mod workload;

use thiserror::Error;

use crate::resources::SimTime;

pub use event::{Event, EventLog, LogError, LogRecord};
pub use metrics::{
    compute_metrics, nearest_rank, Integrals, LatencyStats, MalformedLog, MetricsReport,
    OfferCounts,
};
pub use policy::{scope_of, static_policy_round};
pub use scenario::{
    Failure, FailureKind, Operation, OperationKind, Policy, Pool, PoolBinding, Scenario,
    ScenarioError, WorkloadEntry, DEFAULT_ROUND_INTERVAL, MS_PER_DAY,
};
pub use synth::{random_scenario, Shape};
pub use workload::{arrival_times, generate, stream, Arrival};

/// Framework id of the service framework in every simulation.
pub const SERVICE_FRAMEWORK: &str = "marathon";

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("invariant violated at event {index} (t={at}): {reason}")]
    InvariantViolation {
        index: usize,
        at: SimTime,
        reason: String,
    },
    #[error("zero-delay cycle at t={at}")]
    ZeroDelayCycle { at: SimTime },
    #[error("internal error at t={at}: {reason}")]
    Internal { at: SimTime, reason: String },
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub log: EventLog,
    pub report: MetricsReport,
}

/// Runs a scenario with its own seed. With `verify` set, every module
/// invariant is checked after every event.
pub fn run(scenario: &Scenario, verify: bool) -> Result<SimOutput, SimError> {
    engine::run(scenario, scenario.seed, verify)
}

/// Runs a scenario with a different seed.
pub fn run_seeded(scenario: &Scenario, seed: u64, verify: bool) -> Result<SimOutput, SimError> {
    engine::run(scenario, seed, verify)
}
