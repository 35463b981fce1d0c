//! Synthetic scene and dataset generation plus the on-disk formats.

pub mod dataset;
pub mod protocol;
pub mod scene;

pub use dataset::{generate_dataset, Dataset, DatasetManifest, HandRecord, SampleRecord};
pub use scene::{ground_truth_mesh, sample_scene, Scene};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid configuration: {0}")]
    ConfigError(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset record: {0}")]
    Malformed(String),
    #[error("split `{0}` is empty or missing")]
    EmptySplit(String),
}
