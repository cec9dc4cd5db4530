//! Manifest-driven commands that write into a run directory.

use std::cell::RefCell;
use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{BufWriter, ErrorKind, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::manifest::{resolve_manifest, PairSpec, RunManifest, FORMAT_MARKER};
use super::{io_err, parse_stopping, sibling_bpe, BacktranslateArgs, CliError, FinetuneArgs, Result};
use crate::corpus::{self, ParallelCorpus};
use crate::eval::BleuReport;
use crate::lang::LangCode;
use crate::model::{TransformerConfig, TransformerModel};
use crate::pipeline::{
    self, AdaptOptions, BacktranslateConfig, BtCorpora, Checkpoint, MetricRecord, PairDataset, TrainOutcome,
};
use crate::tokenizer::{bpe_train_with, BpeConfig, BpeModel};
use crate::translit;

pub const RUN_MANIFEST: &str = "manifest.resolved.toml";
pub const RUN_LOCK: &str = ".lock";
pub const RUN_BPE: &str = "bpe";
const RUN_FORMAT: &str = "FORMAT";

pub(crate) struct Log {
    pub quiet: bool,
}

impl Log {
    pub fn say(&self, args: fmt::Arguments) {
        if !self.quiet {
            eprintln!("{args}");
        }
    }
}

/// An output directory held under an exclusive lock file.
struct RunDir {
    root: PathBuf,
}

impl RunDir {
    fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(io_err(root))?;
        let marker = root.join(RUN_FORMAT);
        match fs::read_to_string(&marker) {
            Ok(s) if s == FORMAT_MARKER => {}
            Ok(_) => return Err(CliError::RunFormat { path: root.to_path_buf() }),
            Err(e) if e.kind() == ErrorKind::NotFound => {
                let mut entries = fs::read_dir(root).map_err(io_err(root))?;
                if entries.next().is_some() {
                    return Err(CliError::RunFormat { path: root.to_path_buf() });
                }
            }
            Err(e) => return Err(io_err(&marker)(e)),
        }
        let lock = root.join(RUN_LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == ErrorKind::AlreadyExists => return Err(CliError::Locked(root.to_path_buf())),
            Err(e) => return Err(io_err(&lock)(e)),
        }
        let dir = RunDir { root: root.to_path_buf() };
        dir.write(RUN_FORMAT, FORMAT_MARKER)?;
        Ok(dir)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(io_err(&p))
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let json = serde_json::to_string_pretty(value).expect("value serializes");
        self.write(name, format!("{json}\n"))
    }

    fn subdir(&self, name: &str) -> Result<()> {
        let p = self.path(name);
        fs::create_dir_all(&p).map_err(io_err(&p))
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(RUN_LOCK));
    }
}

/// Streams metric records to `metrics.jsonl`.
struct MetricsFile<'a> {
    out: RefCell<BufWriter<fs::File>>,
    path: PathBuf,
    error: RefCell<Option<std::io::Error>>,
    log: &'a Log,
}

impl<'a> MetricsFile<'a> {
    fn create(run: &RunDir, log: &'a Log) -> Result<Self> {
        let path = run.path("metrics.jsonl");
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        Ok(MetricsFile {
            out: RefCell::new(BufWriter::new(file)),
            path,
            error: RefCell::new(None),
            log,
        })
    }

    fn record(&self, r: &MetricRecord) {
        if let Some(v) = r.valid_loss {
            self.log.say(format_args!(
                "epoch {} step {} pair {} valid loss {v:.4}",
                r.epoch, r.step, r.pair_id
            ));
        }
        let res = writeln!(self.out.borrow_mut(), "{}", r.to_json_line());
        if let Err(e) = res {
            self.error.borrow_mut().get_or_insert(e);
        }
    }

    fn finish(self) -> Result<()> {
        let flushed = self.out.into_inner().flush();
        match self.error.into_inner() {
            Some(e) => Err(io_err(&self.path)(e)),
            None => flushed.map_err(io_err(&self.path)),
        }
    }
}

struct PairData {
    spec: PairSpec,
    train: ParallelCorpus,
    valid: ParallelCorpus,
    test: Option<ParallelCorpus>,
}

impl PairData {
    fn name(&self, i: usize) -> String {
        format!("{i}.{}-{}", self.spec.source_lang, self.spec.target_lang)
    }
}

fn only_pair_with_target(pairs: &[PairData], lang: LangCode) -> Result<usize> {
    let hits: Vec<usize> = (0..pairs.len())
        .filter(|&i| pairs[i].spec.target_lang == lang)
        .collect();
    match hits[..] {
        [i] => Ok(i),
        [] => Err(CliError::InvalidArgument(format!("augment: no pair has target language {lang}"))),
        _ => Err(CliError::InvalidArgument(format!(
            "augment: several pairs have target language {lang}"
        ))),
    }
}

/// Loads every pair, filters the training sides and applies augmentation.
fn prepare(m: &RunManifest, run: &RunDir, log: &Log) -> Result<Vec<PairData>> {
    run.subdir("data")?;
    let mut pairs = Vec::with_capacity(m.pairs.len());
    for (i, spec) in m.pairs.iter().enumerate() {
        let (sl, tl) = (spec.source_lang, spec.target_lang);
        let raw = corpus::load_parallel(&spec.train_src, &spec.train_tgt, sl, tl)?;
        let (train, report) = corpus::filter_corpus(&raw, &m.filter);
        let valid = corpus::load_parallel(&spec.valid_src, &spec.valid_tgt, sl, tl)?;
        let test = match (&spec.test_src, &spec.test_tgt) {
            (Some(s), Some(t)) => Some(corpus::load_parallel(s, t, sl, tl)?),
            _ => None,
        };
        let p = PairData {
            spec: spec.clone(),
            train,
            valid,
            test,
        };
        log.say(format_args!(
            "pair {i} {sl}-{tl}: kept {} of {} training pairs",
            report.retained_pairs, report.input_pairs
        ));
        run.write(&format!("data/{}.filter.json", p.name(i)), format!("{}\n", report.to_json()))?;
        pairs.push(p);
    }
    let filtered: Vec<ParallelCorpus> = pairs.iter().map(|p| p.train.clone()).collect();
    for a in &m.augment {
        let low = only_pair_with_target(&pairs, a.target)?;
        let high = only_pair_with_target(&pairs, a.from)?;
        pairs[low].train = translit::augment_related(&pairs[low].train, &filtered[high])?;
        log.say(format_args!(
            "pair {low}: augmented with {} transliterated {} pairs",
            filtered[high].len(),
            a.from
        ));
    }
    for (i, p) in pairs.iter().enumerate() {
        let name = p.name(i);
        corpus::write_parallel(
            &p.train,
            run.path(&format!("data/{name}.train.{}", p.spec.source_lang)),
            run.path(&format!("data/{name}.train.{}", p.spec.target_lang)),
        )?;
    }
    Ok(pairs)
}

fn learn_bpe<'a>(m: &RunManifest, lines: impl IntoIterator<Item = &'a str>, run: &RunDir, log: &Log) -> Result<BpeModel> {
    let bpe = bpe_train_with(
        lines,
        &BpeConfig {
            num_merges: m.tokenizer.num_merges,
            max_vocab: m.tokenizer.max_vocab,
        },
    )?;
    bpe.save(run.path(RUN_BPE))?;
    log.say(format_args!("BPE vocabulary of {}", bpe.vocab_size()));
    Ok(bpe)
}

fn model_config(m: &RunManifest, bpe: &BpeModel) -> TransformerConfig {
    TransformerConfig {
        vocab_size_src: bpe.vocab_size(),
        vocab_size_tgt: bpe.vocab_size(),
        ..m.model.clone()
    }
}

fn datasets(pairs: &[PairData], bpe: &BpeModel, max_pos: usize) -> (Vec<PairDataset>, Vec<PairDataset>) {
    let train = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| PairDataset::from_corpus(i, &p.train, bpe, p.spec.weight, max_pos))
        .collect();
    let valid = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| PairDataset::from_corpus(i, &p.valid, bpe, p.spec.weight, max_pos))
        .collect();
    (train, valid)
}

#[derive(Serialize)]
struct PairScore {
    pair_id: usize,
    source_lang: LangCode,
    target_lang: LangCode,
    bleu: BleuReport,
}

/// Translates every test set with `model`, writes hypotheses and `scores.json`.
fn score_tests(
    m: &RunManifest,
    pairs: &[PairData],
    model: &TransformerModel,
    bpe: &BpeModel,
    run: &RunDir,
) -> Result<()> {
    run.subdir("hyp")?;
    let mut scores = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let Some(test) = &p.test else { continue };
        let (report, hyps) = pipeline::evaluate_bleu(model, bpe, test, &m.decode)?;
        corpus::write_lines(
            run.path(&format!("hyp/{}.test.{}", p.name(i), p.spec.target_lang)),
            hyps.iter().map(String::as_str),
        )?;
        println!(
            "pair {i} {}-{} BLEU = {:.2}",
            p.spec.source_lang, p.spec.target_lang, report.score
        );
        scores.push(PairScore {
            pair_id: i,
            source_lang: p.spec.source_lang,
            target_lang: p.spec.target_lang,
            bleu: report,
        });
    }
    run.write_json("scores.json", &scores)
}

fn save_outcome(out: &TrainOutcome, run: &RunDir) -> Result<()> {
    pipeline::save_checkpoint(&out.best, run.path("best.ckpt"))?;
    pipeline::save_checkpoint(&out.last, run.path("last.ckpt"))?;
    Ok(())
}

fn load_resolved(path: &Path, out: Option<&Path>) -> Result<RunManifest> {
    let mut m = resolve_manifest(path)?;
    if let Some(o) = out {
        m.output_dir = std::path::absolute(o).map_err(io_err(o))?;
    }
    Ok(m)
}

/// `train`: filter, augment, BPE, multi-way training and test scoring.
pub(crate) fn train(manifest: &Path, out: Option<&Path>, log: &Log) -> Result<()> {
    let m = load_resolved(manifest, out)?;
    let run = RunDir::open(&m.output_dir)?;
    run.write(RUN_MANIFEST, m.to_toml())?;
    let pairs = prepare(&m, &run, log)?;
    let lines = pairs
        .iter()
        .flat_map(|p| p.train.sources().chain(p.train.targets()));
    let bpe = learn_bpe(&m, lines, &run, log)?;
    let model = TransformerModel::new(model_config(&m, &bpe), m.seed)?;
    let (train, valid) = datasets(&pairs, &bpe, model.config().max_positions);
    let metrics = MetricsFile::create(&run, log)?;
    let outcome = pipeline::train_multiway(
        model,
        &train,
        &valid,
        &m.hyper,
        &m.schedule.train_config(m.seed),
        &mut |r| metrics.record(r),
    )?;
    metrics.finish()?;
    save_outcome(&outcome, &run)?;
    log.say(format_args!("best epoch {}", outcome.best_epoch));
    score_tests(&m, &pairs, &outcome.best.model, &bpe, &run)
}

#[derive(Serialize)]
struct FinetuneRecord<'a> {
    base: &'a Path,
    bpe: &'a Path,
    epochs: usize,
}

/// `finetune`: domain adaptation of a trained checkpoint.
pub(crate) fn finetune(a: &FinetuneArgs, log: &Log) -> Result<()> {
    let m = load_resolved(&a.manifest, a.out.as_deref())?;
    let base_path = std::path::absolute(&a.base).map_err(io_err(&a.base))?;
    let bpe_path = match &a.bpe {
        Some(p) => std::path::absolute(p).map_err(io_err(p))?,
        None => sibling_bpe(&base_path),
    };
    let base = pipeline::load_checkpoint(&base_path)?;
    let bpe = BpeModel::load(&bpe_path)?;
    let run = RunDir::open(&m.output_dir)?;
    run.write(RUN_MANIFEST, m.to_toml())?;
    run.write_json(
        "finetune.json",
        &FinetuneRecord {
            base: &base_path,
            bpe: &bpe_path,
            epochs: a.epochs,
        },
    )?;
    bpe.save(run.path(RUN_BPE))?;
    let pairs = prepare(&m, &run, log)?;
    let (train, valid) = datasets(&pairs, &bpe, base.model.config().max_positions);
    let cfg = pipeline::TrainConfig {
        max_epochs: a.epochs,
        ..m.schedule.train_config(m.seed)
    };
    let opts = AdaptOptions {
        restore_optimizer: m.finetune.restore_optimizer,
    };
    let metrics = MetricsFile::create(&run, log)?;
    let outcome = pipeline::domain_adapt(&base, &train, &valid, &m.hyper, &cfg, opts, &mut |r| metrics.record(r))?;
    metrics.finish()?;
    save_outcome(&outcome, &run)?;
    score_tests(&m, &pairs, &outcome.best.model, &bpe, &run)
}

#[derive(Serialize)]
struct RoundSummary {
    round: usize,
    n1_pairs: usize,
    n2_pairs: usize,
    backward_train_pairs: usize,
    forward_train_pairs: usize,
    bleu_backward: f64,
    bleu_forward: f64,
}

#[derive(Serialize)]
struct BtSummary {
    rounds: Vec<RoundSummary>,
    trace: Vec<pipeline::BleuPoint>,
}

/// `backtranslate`: iterative back-translation on the first pair.
pub(crate) fn backtranslate(a: &BacktranslateArgs, log: &Log) -> Result<()> {
    let mut m = load_resolved(&a.manifest, a.out.as_deref())?;
    let Some(bt) = m.backtranslate.as_mut() else {
        return Err(CliError::MissingRequired {
            path: a.manifest.clone(),
            key: "backtranslate".into(),
        });
    };
    if let Some(r) = a.rounds {
        bt.rounds = r;
    }
    if let Some(s) = &a.stopping {
        bt.stopping = s.clone();
    }
    let bt = bt.clone();
    let stopping = parse_stopping(&bt.stopping)?;
    let run = RunDir::open(&m.output_dir)?;
    run.write(RUN_MANIFEST, m.to_toml())?;
    let pairs = prepare(&m, &run, log)?;
    let p = &pairs[0];
    let (l1, l2) = (p.spec.source_lang, p.spec.target_lang);
    let test = p
        .test
        .as_ref()
        .ok_or_else(|| CliError::InvalidArgument(format!("pair 0 {l1}-{l2}: backtranslation needs a test set")))?;
    let mono = corpus::load_mono(&bt.mono, l1, true)?;
    let extra = corpus::load_parallel(&bt.extra_src, &bt.extra_tgt, l1, l2)?;
    let lines = p
        .train
        .sources()
        .chain(p.train.targets())
        .chain(mono.lines.iter().map(String::as_str))
        .chain(extra.sources())
        .chain(extra.targets());
    let bpe = learn_bpe(&m, lines, &run, log)?;
    let cfg = BacktranslateConfig {
        rounds: bt.rounds,
        stopping,
        model: model_config(&m, &bpe),
        hyper: m.hyper.clone(),
        train: m.schedule.train_config(m.seed),
        decode: m.decode.clone(),
    };
    let corpora = BtCorpora {
        parallel: &p.train,
        mono: &mono,
        extra: &extra,
        dev: &p.valid,
        test,
    };
    let out = pipeline::backtranslate_iterate(corpora, &bpe, &cfg)?;

    let metrics = MetricsFile::create(&run, log)?;
    out.records.iter().for_each(|r| metrics.record(r));
    metrics.finish()?;
    pipeline::save_checkpoint(&Checkpoint::fresh(out.forward.clone(), m.seed), run.path("forward.ckpt"))?;
    if let Some(b) = &out.backward {
        pipeline::save_checkpoint(&Checkpoint::fresh(b.clone(), m.seed), run.path("backward.ckpt"))?;
    }
    run.subdir("bt")?;
    for r in &out.rounds {
        for (name, c) in [("n1", &r.n1), ("n2", &r.n2)] {
            corpus::write_parallel(
                c,
                run.path(&format!("bt/round{}.{name}.{}", r.round, c.source_lang)),
                run.path(&format!("bt/round{}.{name}.{}", r.round, c.target_lang)),
            )?;
        }
    }
    for pt in &out.trace {
        println!("round {} {} BLEU = {:.2}", pt.round, pt.direction, pt.bleu);
    }
    let summary = BtSummary {
        rounds: out
            .rounds
            .iter()
            .map(|r| RoundSummary {
                round: r.round,
                n1_pairs: r.n1.len(),
                n2_pairs: r.n2.len(),
                backward_train_pairs: r.tr_bwd_len,
                forward_train_pairs: r.tr_fwd_len,
                bleu_backward: r.bleu_bwd,
                bleu_forward: r.bleu_fwd,
            })
            .collect(),
        trace: out.trace,
    };
    run.write_json("backtranslate.json", &summary)
}
