use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datamodules::PartitionScheme;
use crate::numerics::{ModelSpec, TrainingMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    #[default]
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    #[default]
    Fedavg,
    Fedsgd,
}

impl AggregatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AggregatorKind::Fedavg => "fedavg",
            AggregatorKind::Fedsgd => "fedsgd",
        }
    }
}

/// How aggregation weights are assigned to the sampled agents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    #[default]
    ByShardSize,
}

/// A validation failure located by its dotted config path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl ConfigIssue {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Everything that determines an experiment's numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct FLConfig {
    pub num_agents: usize,
    pub global_epochs: usize,
    pub local_epochs: usize,
    pub sample_fraction: f64,
    pub sampler: SamplerKind,
    pub aggregator: AggregatorKind,
    pub weighting: Weighting,
    pub batch_size: usize,
    pub lr: f64,
    pub model: ModelSpec,
    pub mode: TrainingMode,
    pub pretrained_path: Option<PathBuf>,
    pub partition: PartitionScheme,
    pub seed: u64,
}

impl FLConfig {
    /// A FedAvg config with defaults for everything but the model.
    pub fn new(model: ModelSpec) -> Self {
        Self {
            num_agents: 10,
            global_epochs: 10,
            local_epochs: 1,
            sample_fraction: 1.0,
            sampler: SamplerKind::Random,
            aggregator: AggregatorKind::Fedavg,
            weighting: Weighting::ByShardSize,
            batch_size: 32,
            lr: 0.1,
            model,
            mode: TrainingMode::Scratch,
            pretrained_path: None,
            partition: PartitionScheme::Iid,
            seed: 0,
        }
    }

    /// Every invariant violation, not just the first.
    pub fn issues(&self) -> Vec<ConfigIssue> {
        let mut out = Vec::new();
        if self.num_agents == 0 {
            out.push(ConfigIssue::new("agents.count", "must be at least 1"));
        }
        if self.global_epochs == 0 {
            out.push(ConfigIssue::new(
                "training.global_epochs",
                "must be at least 1",
            ));
        }
        if self.local_epochs == 0 {
            out.push(ConfigIssue::new(
                "training.local_epochs",
                "must be at least 1",
            ));
        }
        if !(self.sample_fraction > 0.0 && self.sample_fraction <= 1.0) {
            out.push(ConfigIssue::new(
                "sampling.fraction",
                format!("must lie in (0, 1], got {}", self.sample_fraction),
            ));
        }
        if self.batch_size == 0 {
            out.push(ConfigIssue::new(
                "training.batch_size",
                "must be at least 1",
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            out.push(ConfigIssue::new(
                "training.lr",
                format!("must be a positive finite number, got {}", self.lr),
            ));
        }
        if let PartitionScheme::NonIid { niid_factor: 0 } = self.partition {
            out.push(ConfigIssue::new(
                "partition.niid_factor",
                "must be at least 1",
            ));
        }
        if self.aggregator == AggregatorKind::Fedsgd && self.local_epochs != 1 {
            out.push(ConfigIssue::new(
                "training.local_epochs",
                "fedsgd requires local_epochs=1",
            ));
        }
        if self.mode.needs_pretrained() && self.pretrained_path.is_none() {
            out.push(ConfigIssue::new(
                "model.pretrained_path",
                format!("required when mode is {}", self.mode.as_str()),
            ));
        }
        out
    }

    pub fn validate(&self) -> Result<(), super::FederatedError> {
        let issues = self.issues();
        if issues.is_empty() {
            Ok(())
        } else {
            Err(super::FederatedError::Config(issues))
        }
    }
}
