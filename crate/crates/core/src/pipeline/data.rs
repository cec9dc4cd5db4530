use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{PipelineError, Result};
use crate::corpus::ParallelCorpus;
use crate::lang::LangCode;
use crate::model::Batch;
use crate::tokenizer::{inject_target_token, BpeModel, BOS, EOS};

/// One language pair as id sequences. Sources carry the `<2xx>` tag of the
/// target language and end with EOS; targets are wrapped in BOS/EOS.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    pub pair_id: usize,
    pub source_lang: LangCode,
    pub target_lang: LangCode,
    pub src: Vec<Vec<u32>>,
    pub tgt: Vec<Vec<u32>>,
    pub weight: f64,
    pub vocab_size: usize,
}

/// Source ids for a tagged sentence, truncated to `max_len` with EOS kept.
pub fn encode_source(bpe: &BpeModel, text: &str, target_lang: LangCode, max_len: usize) -> Vec<u32> {
    let tagged = format!("{} {text}", target_lang.tag());
    let mut ids = bpe.encode(&tagged);
    ids.truncate(max_len.saturating_sub(1));
    ids.push(EOS);
    ids
}

/// BOS + target ids + EOS; at most `max_len` decoder inputs.
pub fn encode_target(bpe: &BpeModel, text: &str, max_len: usize) -> Vec<u32> {
    let mut ids = vec![BOS];
    ids.extend(bpe.encode(text).into_iter().take(max_len.saturating_sub(1)));
    ids.push(EOS);
    ids
}

impl PairDataset {
    pub fn from_corpus(
        pair_id: usize,
        corpus: &ParallelCorpus,
        bpe: &BpeModel,
        weight: f64,
        max_positions: usize,
    ) -> Self {
        let (src, tgt) = corpus
            .pairs
            .iter()
            .map(|p| {
                let tagged = inject_target_token(p);
                let mut s = bpe.encode(&tagged.source);
                s.truncate(max_positions - 1);
                s.push(EOS);
                (s, encode_target(bpe, &p.target, max_positions))
            })
            .unzip();
        PairDataset {
            pair_id,
            source_lang: corpus.source_lang,
            target_lang: corpus.target_lang,
            src,
            tgt,
            weight,
            vocab_size: bpe.vocab_size(),
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let src = indices.iter().map(|&i| self.src[i].clone()).collect();
        let tgt = indices.iter().map(|&i| self.tgt[i].clone()).collect();
        Ok(Batch::new(src, tgt)?)
    }

    /// Consecutive batches covering the dataset in order.
    pub fn batches(&self, batch_size: usize) -> Result<Vec<Batch>> {
        let idx: Vec<usize> = (0..self.len()).collect();
        idx.chunks(batch_size.max(1)).map(|c| self.batch(c)).collect()
    }

    /// SHA-256 over the id content, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{}-{}", self.source_lang, self.target_lang));
        for (s, t) in self.src.iter().zip(&self.tgt) {
            for id in s.iter().chain([&u32::MAX]).chain(t).chain([&u32::MAX]) {
                h.update(id.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn check_datasets(datasets: &[PairDataset], what: &str) -> Result<()> {
    if datasets.is_empty() || datasets.iter().all(PairDataset::is_empty) {
        return Err(PipelineError::EmptyDataset(what.to_string()));
    }
    if let Some(d) = datasets.iter().find(|d| d.is_empty()) {
        return Err(PipelineError::EmptyDataset(format!("{what}: pair {} has no sentences", d.pair_id)));
    }
    Ok(())
}

/// Endless shuffled batches over one dataset. Each pass is a fresh
/// permutation; the final batch of a pass may be short.
#[derive(Debug, Clone)]
pub struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    pub fn new(len: usize, batch_size: usize, rng: ChaCha8Rng) -> Self {
        BatchStream {
            order: (0..len).collect(),
            pos: len,
            batch_size: batch_size.max(1),
            rng,
        }
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}
