use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::encode_source;
use super::{PipelineError, Result};
use crate::corpus::ParallelCorpus;
use crate::eval::{corpus_bleu, tokenize_for_bleu, BleuReport, EvalError};
use crate::lang::LangCode;
use crate::model::{beam_search, greedy_decode_batch, TransformerModel};
use crate::tokenizer::BpeModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    /// 1 selects batched greedy decoding.
    pub beam_size: usize,
    pub length_penalty: f64,
    /// Output limit is `max_len_ratio · source length + max_len_extra`.
    pub max_len_ratio: f64,
    pub max_len_extra: usize,
    /// Sentences per greedy batch.
    pub batch_size: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 20,
            length_penalty: 1.0,
            max_len_ratio: 2.0,
            max_len_extra: 10,
            batch_size: 64,
        }
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        DecodeConfig {
            beam_size: 1,
            ..Default::default()
        }
    }

    fn limit(&self, src_len: usize) -> usize {
        (self.max_len_ratio * src_len as f64).ceil() as usize + self.max_len_extra
    }
}

/// Translates `sentences` into `target_lang`, preserving input order.
pub fn translate_sentences(
    model: &TransformerModel,
    bpe: &BpeModel,
    sentences: &[String],
    target_lang: LangCode,
    cfg: &DecodeConfig,
) -> Result<Vec<String>> {
    if cfg.beam_size == 0 {
        return Err(PipelineError::InvalidConfig("beam_size must be at least 1".into()));
    }
    let max_pos = model.config().max_positions;
    let srcs: Vec<Vec<u32>> = sentences
        .iter()
        .map(|s| encode_source(bpe, s, target_lang, max_pos))
        .collect();
    let ids: Vec<Vec<u32>> = if cfg.beam_size == 1 {
        let mut out = Vec::with_capacity(srcs.len());
        for chunk in srcs.chunks(cfg.batch_size.max(1)) {
            let limit = chunk.iter().map(|s| cfg.limit(s.len())).max().unwrap_or(1);
            let decoded = greedy_decode_batch(model, chunk, limit)?;
            out.extend(decoded.into_iter().zip(chunk).map(|(mut d, s)| {
                d.truncate(cfg.limit(s.len()));
                d
            }));
        }
        out
    } else {
        srcs.par_iter()
            .map(|s| {
                beam_search(model, s, cfg.beam_size, cfg.limit(s.len()), cfg.length_penalty).map(|h| h.tokens)
            })
            .collect::<Result<_, _>>()?
    };
    ids.iter().map(|i| Ok(bpe.decode(i)?)).collect()
}

/// BLEU of `model` on a held-out corpus; an all-empty output scores 0.
pub fn evaluate_bleu(
    model: &TransformerModel,
    bpe: &BpeModel,
    heldout: &ParallelCorpus,
    cfg: &DecodeConfig,
) -> Result<(BleuReport, Vec<String>)> {
    let sources: Vec<String> = heldout.sources().map(str::to_string).collect();
    let refs: Vec<String> = heldout.targets().map(str::to_string).collect();
    let hyps = translate_sentences(model, bpe, &sources, heldout.target_lang, cfg)?;
    let report = match corpus_bleu(&hyps, &refs, 4) {
        Err(EvalError::EmptyEvaluation) if !refs.is_empty() => BleuReport {
            score: 0.0,
            precisions: vec![0.0; 4],
            brevity_penalty: 0.0,
            hyp_length: 0,
            ref_length: refs.iter().map(|r| tokenize_for_bleu(r).len()).sum(),
        },
        other => other?,
    };
    Ok((report, hyps))
}
