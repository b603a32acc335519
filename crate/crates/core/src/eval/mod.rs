//! Evaluation: contrastive feature extractor, distribution and retrieval
//! metrics, and oracle-based decomposition scores.

pub mod evaluator;
pub mod metrics;
pub mod report;
pub mod scores;

use thiserror::Error;

pub use evaluator::{train_evaluator, EvaluatorConfig, EvaluatorModel, FEATURE_DIM};
pub use metrics::{diversity, fid, mm_dist, mmodality, r_precision, transition_distance};
pub use report::{evaluate, EvalConfig, MetricReport};
pub use scores::{decomposition_scores, score_decomposition, score_holistic, DecompositionScores, FamilyAccuracy};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{metric} needs at least {need} samples, got {got}")]
    TooFew { metric: &'static str, need: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix not positive semi-definite: {0}")]
    NotPsd(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Text(#[from] crate::text::TextError),
    #[error(transparent)]
    Checkpoint(#[from] crate::tensor::checkpoint::CheckpointError),
    #[error(transparent)]
    Diffusion(#[from] crate::diffusion::DiffusionError),
    #[error(transparent)]
    Vae(#[from] crate::vae::VaeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;
