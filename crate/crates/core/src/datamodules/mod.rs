//! Dataset ingestion and federated partitioning.

mod csv_loader;
mod dataset;
mod idx;
mod partition;
mod synth;

pub use csv_loader::{load_csv, parse_csv};
pub use dataset::{shard_label_histogram, LabeledDataset, Shard};
pub use idx::{load_idx, parse_idx, IMAGE_MAGIC, LABEL_MAGIC};
pub use partition::{
    partition, partition_iid, partition_niid, partition_niid_with_block_order, PartitionPlan,
    PartitionScheme,
};
pub use synth::{blob_centers, synth_blobs};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: bad magic at byte {offset}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        file: &'static str,
        offset: usize,
        expected: u32,
        found: u32,
    },
    #[error("{file}: truncated at byte {offset}: needed {needed} more bytes")]
    Truncated {
        file: &'static str,
        offset: usize,
        needed: usize,
    },
    #[error("count mismatch at byte {offset}: {images} images but {labels} labels")]
    CountMismatch {
        offset: usize,
        images: usize,
        labels: usize,
    },
    #[error("label {label} of sample {index} is outside [0, {num_classes})")]
    InvalidLabel {
        index: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("no samples")]
    NoSamples,
    #[error("line {line}: ragged row with {found} columns, expected {expected}")]
    RaggedRow {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {column}: non-numeric cell {value:?}")]
    NonNumeric {
        line: u64,
        column: usize,
        value: String,
    },
    #[error("line {line}: negative label {value}")]
    NegativeLabel { line: u64, value: i64 },
    #[error("csv: {0}")]
    Csv(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("cannot split {samples} samples into {parts} parts")]
    TooManyParts { parts: usize, samples: usize },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;
