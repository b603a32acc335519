//! Compositional latent diffusion: schedule, denoiser, the three concept
//! supervision variants, and holistic / decomposed sampling.

pub mod config;
pub mod denoiser;
pub mod model;
pub mod sample;
pub mod schedule;
pub mod train;

use thiserror::Error;

use crate::tensor::TensorError;
use crate::text::TextError;
use crate::vae::VaeError;

pub use config::{Aggregation, DenoiserConfig, Mode, TrainConfig, Variant, VariantConfig};
pub use denoiser::Denoiser;
pub use model::{Batch, DiffusionModel, LossVars, TextBank};
pub use sample::{sample_decomposed, sample_holistic, sample_latents};
pub use train::{sample_batch, train_diffusion, train_step, StepLog, TrainSet};
pub use schedule::{make_schedule, NoiseSchedule, ReverseStep, SAMPLE_STEPS};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("timestep {t} outside 1..={max}")]
    Timestep { t: usize, max: usize },
    #[error("sampling steps {steps} outside 1..={max}")]
    Steps { steps: usize, max: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step}: {source}")]
    NonFinite { step: usize, source: TensorError },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Checkpoint(#[from] crate::tensor::checkpoint::CheckpointError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DiffusionError>;
