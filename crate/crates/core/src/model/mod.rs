//! Transformer encoder-decoder with a reverse-mode tape, Adam and beam search.

pub mod attention;
pub mod beam;
pub mod config;
pub mod loss;
pub mod optim;
pub mod tape;
pub mod transformer;

pub use attention::{attention, AttnShape};
pub use beam::{beam_search, greedy_decode, greedy_decode_batch, Hypothesis, StepModel};
pub use config::{TrainHyper, TransformerConfig};
pub use loss::loss_label_smoothed;
pub use optim::{adam_step, clip_grad_norm, lr_at, AdamState};
pub use tape::Mat;
pub use transformer::{Batch, Encoded, Mode, TransformerModel};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("non-finite value in parameter {0}")]
    NonFinite(String),
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::ShapeMismatch(_) => "model.shape_mismatch",
            ModelError::InvalidConfig(_) => "model.invalid_config",
            ModelError::NonFiniteGradient(_) => "model.non_finite_gradient",
            ModelError::NonFinite(_) => "model.non_finite",
        }
    }
}
