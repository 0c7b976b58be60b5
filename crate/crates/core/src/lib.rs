//! Deterministic simulation of cross-device federated learning.
//!
//! The crate is layered bottom-up:
//!
//! * [`numerics`]: flat parameter vectors, linear/MLP models, cross-entropy,
//!   analytic gradients, SGD and trainable-parameter masks.
//! * [`datamodules`]: IDX/CSV loaders, synthetic blobs, and IID / label-skewed
//!   partitioning of a dataset into per-agent shards.
//! * [`federated`]: agents, client sampling, local training, FedAvg/FedSGD
//!   aggregation and the experiment loop.
//! * [`telemetry`]: JSONL/CSV record sinks and a hierarchical wall-time profiler.
//!
//! Every random choice is drawn from a sub-stream derived from one root seed
//! (see [`rng`]), so an experiment is a pure function of its configuration and
//! datasets regardless of how many threads train agents.

pub mod datamodules;
pub mod federated;
pub mod numerics;
pub mod rng;
pub mod telemetry;

pub use datamodules::{LabeledDataset, PartitionPlan, PartitionScheme, Shard};
pub use federated::{
    run_experiment, AggregatorKind, ExperimentReport, FLConfig, FederatedError, RunOptions,
    Weighting,
};
pub use numerics::{ModelKind, ModelSpec, ParamVector, TrainableMask, TrainingMode};
