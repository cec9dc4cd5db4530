use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::data::PairDataset;
use super::train::{train_multiway, MetricRecord, TrainConfig};
use super::translate::{evaluate_bleu, translate_sentences, DecodeConfig};
use super::{PipelineError, Result};
use crate::corpus::{MonoCorpus, ParallelCorpus, SentencePair};
use crate::model::{TrainHyper, TransformerConfig, TransformerModel};
use crate::tokenizer::BpeModel;

/// When one model training inside the loop ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Stopping {
    /// Exactly this many optimizer steps.
    Budget { updates: u64 },
    /// Until validation loss stops improving by `min_delta` for `patience`
    /// epochs, capped by `TrainConfig::max_epochs`.
    Converge { min_delta: f64, patience: usize },
}

impl Stopping {
    pub fn converge() -> Self {
        Stopping::Converge {
            min_delta: 1e-3,
            patience: 3,
        }
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        match *self {
            Stopping::Budget { updates } => TrainConfig {
                max_updates: Some(updates),
                max_epochs: usize::MAX,
                patience: usize::MAX,
                ..base.clone()
            },
            Stopping::Converge { min_delta, patience } => TrainConfig {
                min_delta,
                patience,
                ..base.clone()
            },
        }
    }
}

impl FromStr for Stopping {
    type Err = PipelineError;

    /// `budget:K` or `converge`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "converge" {
            return Ok(Stopping::converge());
        }
        s.strip_prefix("budget:")
            .and_then(|k| k.parse().ok())
            .filter(|&k| k > 0)
            .map(|updates| Stopping::Budget { updates })
            .ok_or_else(|| PipelineError::InvalidConfig(format!("stopping policy {s:?}: expected budget:K or converge")))
    }
}

impl fmt::Display for Stopping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stopping::Budget { updates } => write!(f, "budget:{updates}"),
            Stopping::Converge { .. } => f.write_str("converge"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktranslateConfig {
    pub rounds: usize,
    pub stopping: Stopping,
    pub model: TransformerConfig,
    pub hyper: TrainHyper,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
}

/// Corpora of one back-translation run. `parallel`, `dev` and `test` run
/// Lang1→Lang2; `mono` is Lang1 text; `extra` shares the pair and supplies
/// the Lang2 side that the backward model translates.
#[derive(Debug, Clone, Copy)]
pub struct BtCorpora<'a> {
    pub parallel: &'a ParallelCorpus,
    pub mono: &'a MonoCorpus,
    pub extra: &'a ParallelCorpus,
    pub dev: &'a ParallelCorpus,
    pub test: &'a ParallelCorpus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BtRound {
    pub round: usize,
    /// (Δ→ output, authentic Lang1) pairs, Lang2→Lang1.
    pub n1: ParallelCorpus,
    /// (Δ← output, authentic Lang2) pairs, Lang1→Lang2.
    pub n2: ParallelCorpus,
    pub tr_bwd_len: usize,
    pub tr_fwd_len: usize,
    pub bleu_bwd: f64,
    pub bleu_fwd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuPoint {
    pub round: usize,
    pub direction: String,
    pub bleu: f64,
}

#[derive(Debug, Clone)]
pub struct BtOutcome {
    pub forward: TransformerModel,
    pub backward: Option<TransformerModel>,
    pub rounds: Vec<BtRound>,
    pub trace: Vec<BleuPoint>,
    pub records: Vec<MetricRecord>,
}

/// Trains a fresh model on one direction and returns its best snapshot.
pub fn train_direction(
    corpus: &ParallelCorpus,
    dev: &ParallelCorpus,
    bpe: &BpeModel,
    cfg: &BacktranslateConfig,
    seed: u64,
    sink: &mut dyn FnMut(&MetricRecord),
) -> Result<TransformerModel> {
    let mut mcfg = cfg.model.clone();
    mcfg.vocab_size_src = bpe.vocab_size();
    mcfg.vocab_size_tgt = bpe.vocab_size();
    let model = TransformerModel::new(mcfg, seed)?;
    let max_pos = model.config().max_positions;
    let train = PairDataset::from_corpus(0, corpus, bpe, 1.0, max_pos);
    let valid = PairDataset::from_corpus(0, dev, bpe, 1.0, max_pos);
    let tcfg = TrainConfig {
        seed,
        ..cfg.stopping.apply(&cfg.train)
    };
    let out = train_multiway(model, &[train], &[valid], &cfg.hyper, &tcfg, sink)?;
    Ok(out.best.model)
}

fn synthetic(
    sources: Vec<String>,
    targets: impl Iterator<Item = String>,
    from: &ParallelCorpus,
) -> Result<ParallelCorpus> {
    let mut c = ParallelCorpus::new(from.source_lang, from.target_lang);
    for (i, (s, t)) in sources.into_iter().zip(targets).enumerate() {
        c.push(SentencePair::new(s, t, from.source_lang, from.target_lang, i + 1)?)?;
    }
    Ok(c)
}

/// Iterative back-translation between Lang1 and Lang2.
///
/// Round 0 trains Δ→ on the parallel corpus. Each later round translates the
/// Lang1 monolingual text with Δ→ into N₁ (synthetic Lang2 → authentic
/// Lang1), trains Δ← on reversed(parallel) ∪ N₁, translates the Lang2 side
/// of `extra` with Δ← into N₂ (synthetic Lang1 → authentic Lang2) and trains
/// Δ→ on parallel ∪ N₂. Test BLEU is recorded after every training.
pub fn backtranslate_iterate(
    corpora: BtCorpora,
    bpe: &BpeModel,
    cfg: &BacktranslateConfig,
) -> Result<BtOutcome> {
    let c_p = corpora.parallel;
    let (l1, l2) = (c_p.source_lang, c_p.target_lang);
    if corpora.mono.lang != l1 {
        return Err(PipelineError::LanguageMismatch(format!(
            "monolingual corpus is {} but the forward model reads {l1}",
            corpora.mono.lang
        )));
    }
    for (name, c) in [("extra", corpora.extra), ("dev", corpora.dev), ("test", corpora.test)] {
        if (c.source_lang, c.target_lang) != (l1, l2) {
            return Err(PipelineError::LanguageMismatch(format!(
                "{name} corpus is {}→{}, expected {l1}→{l2}",
                c.source_lang, c.target_lang
            )));
        }
    }
    if c_p.is_empty() {
        return Err(PipelineError::EmptyDataset("parallel corpus".into()));
    }
    let dev_bwd = corpora.dev.reversed();
    let test_bwd = corpora.test.reversed();
    let c_p_bwd = c_p.reversed();
    let mut records = Vec::new();
    let mut sink = |r: &MetricRecord| records.push(r.clone());
    let mut trace = Vec::new();
    let mut stage = 0u64;
    let mut next_seed = || {
        stage += 1;
        cfg.train.seed.wrapping_add(stage - 1)
    };

    let mut forward = train_direction(c_p, corpora.dev, bpe, cfg, next_seed(), &mut sink)?;
    let bleu = evaluate_bleu(&forward, bpe, corpora.test, &cfg.decode)?.0.score;
    trace.push(BleuPoint {
        round: 0,
        direction: "fwd".into(),
        bleu,
    });
    let mut backward = None;
    let mut rounds = Vec::new();
    for round in 1..=cfg.rounds {
        let n1_src = translate_sentences(&forward, bpe, &corpora.mono.lines, l2, &cfg.decode)?;
        let n1 = synthetic(n1_src, corpora.mono.lines.iter().cloned(), &c_p_bwd)?;
        let tr_bwd = c_p_bwd.union(&n1)?;
        let bwd = train_direction(&tr_bwd, &dev_bwd, bpe, cfg, next_seed(), &mut sink)?;
        let bleu_bwd = evaluate_bleu(&bwd, bpe, &test_bwd, &cfg.decode)?.0.score;
        trace.push(BleuPoint {
            round,
            direction: "bwd".into(),
            bleu: bleu_bwd,
        });

        let extra_tgt: Vec<String> = corpora.extra.targets().map(str::to_string).collect();
        let n2_src = translate_sentences(&bwd, bpe, &extra_tgt, l1, &cfg.decode)?;
        let n2 = synthetic(n2_src, extra_tgt.into_iter(), c_p)?;
        let tr_fwd = c_p.union(&n2)?;
        forward = train_direction(&tr_fwd, corpora.dev, bpe, cfg, next_seed(), &mut sink)?;
        let bleu_fwd = evaluate_bleu(&forward, bpe, corpora.test, &cfg.decode)?.0.score;
        trace.push(BleuPoint {
            round,
            direction: "fwd".into(),
            bleu: bleu_fwd,
        });
        rounds.push(BtRound {
            round,
            tr_bwd_len: tr_bwd.len(),
            tr_fwd_len: tr_fwd.len(),
            n1,
            n2,
            bleu_bwd,
            bleu_fwd,
        });
        backward = Some(bwd);
    }
    Ok(BtOutcome {
        forward,
        backward,
        rounds,
        trace,
        records,
    })
}
