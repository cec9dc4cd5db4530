use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::PairDataset;
use super::{PipelineError, Result};

/// How language pairs are weighted when drawing micro-batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Sampling {
    /// Each pair with probability 1/M.
    #[default]
    Uniform,
    /// Proportional to each dataset's `weight`.
    Weighted,
    /// Proportional to `|D_m|^(1/T)`.
    Temperature { t: f64 },
}

/// Draws pair indices according to normalised weights.
#[derive(Debug, Clone)]
pub struct PairSampler {
    cumulative: Vec<f64>,
    rng: ChaCha8Rng,
}

impl PairSampler {
    pub fn new(datasets: &[PairDataset], sampling: Sampling, rng: ChaCha8Rng) -> Result<Self> {
        let raw: Vec<f64> = match sampling {
            Sampling::Uniform => vec![1.0; datasets.len()],
            Sampling::Weighted => datasets.iter().map(|d| d.weight).collect(),
            Sampling::Temperature { t } => {
                if !(t > 0.0) {
                    return Err(PipelineError::InvalidConfig("temperature must be positive".into()));
                }
                datasets.iter().map(|d| (d.len() as f64).powf(1.0 / t)).collect()
            }
        };
        Self::from_weights(&raw, rng)
    }

    pub fn from_weights(weights: &[f64], rng: ChaCha8Rng) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(PipelineError::InvalidConfig("weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(PipelineError::InvalidConfig("weights sum to zero".into()));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        Ok(PairSampler { cumulative, rng })
    }

    pub fn probabilities(&self) -> Vec<f64> {
        let mut prev = 0.0;
        self.cumulative
            .iter()
            .map(|&c| {
                let p = c - prev;
                prev = c;
                p
            })
            .collect()
    }

    /// Index of the next pair. A single pair never consumes randomness.
    pub fn sample(&mut self) -> usize {
        let n = self.cumulative.len();
        if n == 1 {
            return 0;
        }
        let u: f64 = self.rng.random();
        self.cumulative.iter().position(|&c| u < c).unwrap_or(n - 1)
    }
}
