use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::baselines::OracleError;
use crate::checkpoint::CheckpointError;
use crate::env::EnvError;
use crate::instance::InstanceError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate baseline: need at least 2 rollouts, got {0}")]
    DegenerateBaseline(usize),
    #[error("non-finite loss in epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
