//! Federated orchestration: agents, sampling, local training, aggregation
//! and the end-to-end experiment loop.

mod agent;
mod aggregate;
mod config;
mod experiment;
mod training;

pub use agent::{sample_agents, sample_count, AgentState};
pub use aggregate::{aggregate_fedavg, aggregate_fedsgd, assign_weights, compute_weights};
pub use config::{AggregatorKind, ConfigIssue, FLConfig, SamplerKind, Weighting};
pub use experiment::{run_experiment, ExperimentReport, RunOptions};
pub use training::{
    evaluate, local_gradient, local_train, pretrain, AgentUpdate, EpochMetrics, GlobalModelState,
    LocalTraining, PretrainConfig,
};

use thiserror::Error;

use crate::datamodules::DataError;
use crate::numerics::{NumericsError, ParamFileError};
use crate::telemetry::{ProfilerError, TelemetryError};

#[derive(Debug, Error)]
pub enum FederatedError {
    #[error("invalid configuration: {}", join_issues(.0))]
    Config(Vec<ConfigIssue>),
    #[error("{context}: {source}")]
    Numerics {
        context: String,
        #[source]
        source: NumericsError,
    },
    #[error("{context}: {source}")]
    Data {
        context: String,
        #[source]
        source: DataError,
    },
    #[error("training diverged: agent {agent}, round {round}, epoch {epoch}: {detail}")]
    Divergence {
        agent: usize,
        round: u64,
        epoch: usize,
        detail: String,
    },
    #[error("parameter file {path}: {source}")]
    ParamFile {
        path: String,
        #[source]
        source: ParamFileError,
    },
    #[error("pretrained parameter file holds {found} parameters but the model needs {expected}")]
    PretrainedMismatch { expected: usize, found: usize },
    #[error("dataset incompatible with model: {0}")]
    Incompatible(String),
    #[error("aggregation: {0}")]
    Aggregation(String),
    #[error("no agents to sample from")]
    NoAgents,
    #[error("telemetry: {0}")]
    Telemetry(#[from] TelemetryError),
    #[error("profiler: {0}")]
    Profiler(#[from] ProfilerError),
}

fn join_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T, E = FederatedError> = std::result::Result<T, E>;
