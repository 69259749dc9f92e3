//! From-scratch neural stack: layers, coefficient encoders, the LSTM
//! baseline, full-batch momentum training and JSON checkpoints.
//!
//! Everything runs in `f64` on a single thread, so a given seed, config and
//! dataset always produce bit-identical parameters.

pub mod baseline;
pub mod checkpoint;
pub mod encoder;
pub mod gradcheck;
pub mod layers;
pub mod train;

use thiserror::Error;

use crate::basis::BasisError;

pub use baseline::{baseline_rollout, BaselineModel, WINDOW};
pub use checkpoint::Checkpoint;
pub use encoder::{CoefficientEncoder, ConditionScaler, Modality, IMAGE_SIZE};
pub use layers::{Activation, Params, TensorVisitor};
pub use train::{train_baseline, train_encoder, LossHistory, TrainConfig, TrainedBaseline, TrainedEncoder};

#[derive(Debug, Error)]
pub enum NetError {
    #[error("normalized {feature} = {value} lies outside the accepted band [-0.5, 1.5]")]
    NotNormalized { feature: String, value: f64 },
    #[error("image must be 32x32, got {width}x{height}")]
    BadImageSize { width: usize, height: usize },
    #[error("modality mismatch: {0}")]
    ModalityMismatch(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("window must hold exactly 5 values, got {0}")]
    BadWindow(usize),
    #[error("trajectory {id} has {len} points; at least 6 are needed")]
    TrajectoryTooShort { id: String, len: usize },
    #[error("sample {0} has no smoothed trajectory")]
    MissingSmoothed(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Basis(#[from] BasisError),
}
