//! Model variants, the training objective, the training loop, evaluation and
//! checkpoints.

mod checkpoint;
mod config;
mod network;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{EvalRecolor, EvalWeight, ModelConfig, Variant};
pub use network::{BatchInputs, ForwardVars, LossBreakdown, LossVars, Model, StepOutput};
pub use train::{train, write_epoch_log, EpochLog, Predictor, Standardizer, TrainOutcome};

use thiserror::Error;

use crate::label_space::LabelSpaceError;
use crate::metrics::MetricsError;
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    LabelSpace(#[from] LabelSpaceError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        epoch: usize,
        step: usize,
        detail: String,
        /// Most recent checkpoint with finite parameters.
        last_good: Option<Box<Checkpoint>>,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
