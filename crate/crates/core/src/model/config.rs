use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub dropout: f64,
    pub max_positions: usize,
    pub vocab_size_src: usize,
    pub vocab_size_tgt: usize,
    /// One table for source, target and output projection.
    pub shared_embeddings: bool,
}

impl Default for TransformerConfig {
    /// Full-size architecture with the desk-scale dropout of 0.1.
    fn default() -> Self {
        TransformerConfig {
            num_layers: 6,
            num_heads: 8,
            d_model: 512,
            d_ffn: 2048,
            dropout: 0.1,
            max_positions: 256,
            vocab_size_src: 0,
            vocab_size_tgt: 0,
            shared_embeddings: true,
        }
    }
}

impl TransformerConfig {
    /// The published configuration, including its 0.6 dropout.
    pub fn paper() -> Self {
        TransformerConfig {
            dropout: 0.6,
            ..Default::default()
        }
    }

    pub fn tiny(vocab: usize, num_layers: usize, num_heads: usize, d_model: usize, d_ffn: usize) -> Self {
        TransformerConfig {
            num_layers,
            num_heads,
            d_model,
            d_ffn,
            dropout: 0.0,
            max_positions: 64,
            vocab_size_src: vocab,
            vocab_size_tgt: vocab,
            shared_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return bad("d_model must be divisible by num_heads");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.vocab_size_src == 0 || self.vocab_size_tgt == 0 {
            return bad("vocabulary sizes must be positive");
        }
        if self.shared_embeddings && self.vocab_size_src != self.vocab_size_tgt {
            return bad("shared embeddings need equal vocabulary sizes");
        }
        if self.max_positions == 0 || self.d_ffn == 0 {
            return bad("max_positions and d_ffn must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub peak_lr: f64,
    pub warmup_updates: u64,
    pub label_smoothing: f64,
    /// Micro-batches accumulated per optimizer step.
    pub update_frequency: usize,
    pub clip_norm: Option<f64>,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            peak_lr: 5e-4,
            warmup_updates: 8000,
            label_smoothing: 0.1,
            update_frequency: 15,
            clip_norm: None,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("betas must lie in (0, 1)");
        }
        if !(self.peak_lr > 0.0) {
            return bad("peak_lr must be positive");
        }
        if self.warmup_updates < 1 {
            return bad("warmup_updates must be at least 1");
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad("label_smoothing must lie in [0, 1)");
        }
        if self.update_frequency < 1 {
            return bad("update_frequency must be at least 1");
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }
}
