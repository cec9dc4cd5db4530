//! Multiway training, checkpoints, domain adaptation and iterative
//! back-translation.

pub mod backtranslate;
pub mod checkpoint;
pub mod data;
pub mod sampler;
pub mod train;
pub mod translate;

use std::path::PathBuf;

pub use backtranslate::{
    backtranslate_iterate, train_direction, BacktranslateConfig, BleuPoint, BtCorpora, BtOutcome, BtRound, Stopping,
};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, Provenance};
pub use data::{BatchStream, PairDataset};
pub use sampler::{PairSampler, Sampling};
pub use train::{
    domain_adapt, early_stop, evaluate_loss, train_multiway, train_plain, AdaptOptions, MetricRecord,
    StopDecision, TrainConfig, TrainOutcome, TrainState,
};
pub use translate::{evaluate_bleu, translate_sentences, DecodeConfig};

use crate::corpus::CorpusError;
use crate::eval::EvalError;
use crate::model::ModelError;
use crate::tokenizer::TokenizerError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("no training data: {0}")]
    EmptyDataset(String),
    #[error("checkpoint incompatible: {0}")]
    CheckpointIncompatible(String),
    #[error("{path}: corrupt checkpoint: {reason}")]
    CorruptCheckpoint { path: PathBuf, reason: String },
    #[error("{path}: version mismatch: {reason}")]
    VersionMismatch { path: PathBuf, reason: String },
    #[error("language mismatch: {0}")]
    LanguageMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl PipelineError {
    pub fn code(&self) -> &'static str {
        match self {
            PipelineError::EmptyDataset(_) => "pipeline.empty_dataset",
            PipelineError::CheckpointIncompatible(_) => "pipeline.checkpoint_incompatible",
            PipelineError::CorruptCheckpoint { .. } => "pipeline.corrupt_checkpoint",
            PipelineError::VersionMismatch { .. } => "pipeline.version_mismatch",
            PipelineError::LanguageMismatch(_) => "pipeline.language_mismatch",
            PipelineError::InvalidConfig(_) => "pipeline.invalid_config",
            PipelineError::Io { .. } => "pipeline.io",
            PipelineError::Model(e) => e.code(),
            PipelineError::Tokenizer(e) => e.code(),
            PipelineError::Corpus(e) => e.code(),
            PipelineError::Eval(e) => e.code(),
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
