//! Dense math core: parameter vectors, models, loss, gradients and SGD.
//!
//! All functions here are pure. Models read their weights straight out of a
//! flat [`ParamVector`] using the contiguous layer layout described by
//! [`ModelSpec::layers`].

mod flpv;
mod loss;
mod mask;
mod model;
mod params;

pub use flpv::{decode_params, encode_params, read_params, write_params, ParamFileError};
pub use loss::{cross_entropy, per_sample_cross_entropy, BatchMetrics};
pub use mask::{count_params, ParamCountReport, TrainableMask, TrainingMode};
pub use model::{
    backward, forward, init_params, loss_and_gradient, Activation, LayerLayout, ModelKind,
    ModelSpec,
};
pub use params::{sgd_step, sgd_step_in_place, ParamVector};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("{what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("label {label} at row {row} out of range for {num_classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid learning rate {0}")]
    InvalidLearningRate(f64),
}

pub type Result<T, E = NumericsError> = std::result::Result<T, E>;
