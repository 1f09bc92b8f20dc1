use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::data::IngestError;
use crate::manifold::GeometryError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("node {0} has no neighbours left after thresholding")]
    IsolatedNode(usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch} (parameter norm {param_norm:.4e})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        param_norm: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
