//! Autoregressive decoding: beam search and greedy argmax.

use super::tape::Mat;
use super::transformer::{Encoded, TransformerModel};
use super::ModelError;
use crate::tokenizer::{BOS, EOS, PAD};

/// Anything that scores next tokens for a set of prefixes of one source.
pub trait StepModel {
    /// One row of next-token log-probabilities per prefix.
    fn step(&self, prefixes: &[Vec<u32>]) -> Result<Mat, ModelError>;
}

struct SingleSource<'a> {
    model: &'a TransformerModel,
    enc: Encoded,
}

impl StepModel for SingleSource<'_> {
    fn step(&self, prefixes: &[Vec<u32>]) -> Result<Mat, ModelError> {
        let source = vec![0; prefixes.len()];
        self.model.next_log_probs(&self.enc, &source, prefixes)
    }
}

/// A decoded sequence without BOS/EOS, its summed log-probability and its
/// length-normalised score.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub score: f64,
}

fn blocked(id: usize) -> bool {
    id == PAD as usize || id == BOS as usize
}

fn normalised(log_prob: f64, len: usize, penalty: f64) -> f64 {
    log_prob / (len.max(1) as f64).powf(penalty)
}

fn finish(prefix: &[u32], log_prob: f64, penalty: f64) -> Hypothesis {
    let generated = prefix.len() - 1;
    let tokens = prefix[1..]
        .iter()
        .copied()
        .filter(|&t| t != EOS)
        .collect();
    Hypothesis {
        tokens,
        log_prob,
        score: normalised(log_prob, generated, penalty),
    }
}

/// Beam search over `step`. Keeps the `beam_size` best prefixes by summed
/// log-probability; hypotheses that emit EOS leave the beam and compete by
/// `log_prob / len^penalty`. Prefixes still open at `max_len` are closed.
pub fn beam_search_with(
    step: &impl StepModel,
    beam_size: usize,
    max_len: usize,
    penalty: f64,
) -> Result<Hypothesis, ModelError> {
    if beam_size == 0 {
        return Err(ModelError::InvalidConfig("beam_size must be at least 1".into()));
    }
    let mut live: Vec<(Vec<u32>, f64)> = vec![(vec![BOS], 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let prefixes: Vec<Vec<u32>> = live.iter().map(|(p, _)| p.clone()).collect();
        let lp = step.step(&prefixes)?;
        let mut cand: Vec<(f64, usize, usize)> = Vec::with_capacity(live.len() * lp.ncols());
        for (b, (_, base)) in live.iter().enumerate() {
            for (t, &x) in lp.row(b).iter().enumerate() {
                if !blocked(t) && x.is_finite() {
                    cand.push((base + x, b, t));
                }
            }
        }
        cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cand.truncate(beam_size);
        let mut next = Vec::with_capacity(beam_size);
        for (score, b, t) in cand {
            let mut p = live[b].0.clone();
            p.push(t as u32);
            if t as u32 == EOS {
                finished.push(finish(&p, score, penalty));
            } else {
                next.push((p, score));
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    finished.extend(live.iter().map(|(p, s)| finish(p, *s, penalty)));
    finished
        .into_iter()
        .reduce(|best, h| if h.score > best.score { h } else { best })
        .ok_or_else(|| ModelError::ShapeMismatch("no hypothesis produced".into()))
}

/// Argmax decoding until EOS or `max_len` tokens.
pub fn greedy_with(step: &impl StepModel, max_len: usize) -> Result<Hypothesis, ModelError> {
    let mut prefix = vec![BOS];
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let lp = step.step(std::slice::from_ref(&prefix))?;
        let (t, x) = argmax(lp.row(0).iter().copied());
        log_prob += x;
        prefix.push(t);
        if t == EOS {
            break;
        }
    }
    Ok(finish(&prefix, log_prob, 0.0))
}

fn argmax(row: impl Iterator<Item = f64>) -> (u32, f64) {
    let mut best = (EOS, f64::NEG_INFINITY);
    for (t, x) in row.enumerate() {
        if !blocked(t) && x > best.1 {
            best = (t as u32, x);
        }
    }
    best
}

fn decode_limit(model: &TransformerModel, max_len: usize) -> usize {
    max_len.min(model.config().max_positions - 1)
}

pub fn beam_search(
    model: &TransformerModel,
    src_ids: &[u32],
    beam_size: usize,
    max_len: usize,
    penalty: f64,
) -> Result<Hypothesis, ModelError> {
    let enc = model.encode(&[src_ids.to_vec()])?;
    beam_search_with(&SingleSource { model, enc }, beam_size, decode_limit(model, max_len), penalty)
}

pub fn greedy_decode(model: &TransformerModel, src_ids: &[u32], max_len: usize) -> Result<Hypothesis, ModelError> {
    let enc = model.encode(&[src_ids.to_vec()])?;
    greedy_with(&SingleSource { model, enc }, decode_limit(model, max_len))
}

/// Greedy decoding of many sources at once; returns token ids without
/// BOS/EOS, in input order.
pub fn greedy_decode_batch(
    model: &TransformerModel,
    srcs: &[Vec<u32>],
    max_len: usize,
) -> Result<Vec<Vec<u32>>, ModelError> {
    if srcs.is_empty() {
        return Ok(vec![]);
    }
    let max_len = decode_limit(model, max_len);
    let enc = model.encode(srcs)?;
    let mut prefixes: Vec<Vec<u32>> = vec![vec![BOS]; srcs.len()];
    let mut open: Vec<usize> = (0..srcs.len()).collect();
    for _ in 0..max_len {
        if open.is_empty() {
            break;
        }
        let batch: Vec<Vec<u32>> = open.iter().map(|&i| prefixes[i].clone()).collect();
        let lp = model.next_log_probs(&enc, &open, &batch)?;
        let mut still = Vec::with_capacity(open.len());
        for (row, &i) in open.iter().enumerate() {
            let (t, _) = argmax(lp.row(row).iter().copied());
            prefixes[i].push(t);
            if t != EOS {
                still.push(i);
            }
        }
        open = still;
    }
    Ok(prefixes
        .into_iter()
        .map(|p| p.into_iter().skip(1).filter(|&t| t != EOS).collect())
        .collect())
}
