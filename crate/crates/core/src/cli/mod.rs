//! The `mnmt` command line.

mod manifest;
mod run;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::corpus::{self, CorpusError, FilterConfig};
use crate::eval::{self, EvalError};
use crate::lang::LangCode;
use crate::model::ModelError;
use crate::pipeline::{self, DecodeConfig, PipelineError, Stopping};
use crate::tokenizer::{bpe_train_with, BpeConfig, BpeModel, TokenizerError};
use crate::translit::{self, TranslitError};

pub use manifest::{
    resolve_manifest, AugmentSpec, BacktranslateSection, FinetuneSection, PairSpec, RunManifest, ScheduleSection,
    TokenizerSection, FORMAT_MARKER,
};
pub use run::{RUN_BPE, RUN_LOCK, RUN_MANIFEST};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: unknown key `{key}`")]
    UnknownKey { path: PathBuf, key: String },
    #[error("{path}: missing required key `{key}`")]
    MissingRequired { path: PathBuf, key: String },
    #[error("{path}: {msg}")]
    TypeError { path: PathBuf, msg: String },
    #[error("{0}")]
    InvalidArgument(String),
    #[error("{0}: run directory is locked by another process")]
    Locked(PathBuf),
    #[error("{path}: not a run directory of this format")]
    RunFormat { path: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Translit(#[from] TranslitError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::UnknownKey { .. } => "manifest.unknown_key",
            CliError::MissingRequired { .. } => "manifest.missing_required",
            CliError::TypeError { .. } => "manifest.type_error",
            CliError::InvalidArgument(_) => "cli.invalid_argument",
            CliError::Locked(_) => "cli.locked",
            CliError::RunFormat { .. } => "cli.run_format",
            CliError::Io { .. } => "cli.io",
            CliError::Corpus(e) => e.code(),
            CliError::Translit(e) => e.code(),
            CliError::Tokenizer(e) => e.code(),
            CliError::Model(e) => e.code(),
            CliError::Pipeline(e) => e.code(),
            CliError::Eval(e) => e.code(),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "mnmt", version, about = "Multilingual neural machine translation toolkit")]
pub struct Cli {
    /// Suppress progress output on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a parallel corpus and print the per-rule report.
    Filter(FilterArgs),
    /// Transliterate text between related scripts.
    Translit(TranslitArgs),
    /// Add a transliterated related-language corpus to a low-resource one.
    Augment(AugmentArgs),
    /// Learn or apply BPE subwords.
    #[command(subcommand)]
    Bpe(BpeCommand),
    /// Run filter, augment, BPE, training and test scoring from a manifest.
    Train(TrainArgs),
    /// Continue training a checkpoint on in-domain data.
    Finetune(FinetuneArgs),
    /// Iterative back-translation for the first pair of a manifest.
    Backtranslate(BacktranslateArgs),
    /// Translate a file with a trained checkpoint.
    Translate(TranslateArgs),
    /// Corpus BLEU of a hypothesis file against a reference file.
    Score(ScoreArgs),
    /// Print a manifest with every default and absolute path filled in.
    Resolve(ResolveArgs),
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long)]
    pub src_lang: LangCode,
    #[arg(long)]
    pub tgt_lang: LangCode,
    #[arg(long)]
    pub out_src: PathBuf,
    #[arg(long)]
    pub out_tgt: PathBuf,
    /// Also write the report JSON here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len_ratio: Option<f64>,
    #[arg(long)]
    pub script_fraction: Option<f64>,
    #[arg(long)]
    pub keep_duplicates: bool,
}

#[derive(Debug, Args)]
pub struct TranslitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub from: LangCode,
    #[arg(long)]
    pub to: LangCode,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub source_lang: LangCode,
    #[arg(long)]
    pub low_lang: LangCode,
    #[arg(long)]
    pub high_lang: LangCode,
    #[arg(long)]
    pub low_src: PathBuf,
    #[arg(long)]
    pub low_tgt: PathBuf,
    #[arg(long)]
    pub high_src: PathBuf,
    #[arg(long)]
    pub high_tgt: PathBuf,
    #[arg(long)]
    pub out_src: PathBuf,
    #[arg(long)]
    pub out_tgt: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum BpeCommand {
    /// Learn merges from one or more text files.
    Train {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 8000)]
        merges: usize,
        #[arg(long)]
        max_vocab: Option<usize>,
        /// Output prefix; writes PREFIX.merges and PREFIX.vocab.
        #[arg(long)]
        out: PathBuf,
    },
    /// Segment text into subword pieces, or ids with `--ids`.
    Apply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ids: bool,
    },
    /// Turn lines of ids back into text.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Overrides the manifest's output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub epochs: usize,
    /// BPE prefix; defaults to the one next to the base checkpoint.
    #[arg(long)]
    pub bpe: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BacktranslateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub rounds: Option<usize>,
    /// `converge` or `budget:K`.
    #[arg(long)]
    pub stopping: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Target language tag prepended to every source.
    #[arg(long)]
    pub to: LangCode,
    #[arg(long, default_value_t = DecodeConfig::default().beam_size)]
    pub beam: usize,
    #[arg(long, default_value_t = DecodeConfig::default().length_penalty)]
    pub length_penalty: f64,
    /// BPE prefix; defaults to the one next to the checkpoint.
    #[arg(long)]
    pub bpe: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub max_n: usize,
    /// Also write the full report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ResolveArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code: 0 on success, 1 on a domain error, 2 on bad usage.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.code());
            1
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let log = run::Log { quiet: cli.quiet };
    match cli.command {
        Command::Filter(a) => filter(a),
        Command::Translit(a) => transliterate(a, &log),
        Command::Augment(a) => augment(a, &log),
        Command::Bpe(c) => bpe(c, &log),
        Command::Train(a) => run::train(&a.manifest, a.out.as_deref(), &log),
        Command::Finetune(a) => run::finetune(&a, &log),
        Command::Backtranslate(a) => run::backtranslate(&a, &log),
        Command::Translate(a) => translate(a),
        Command::Score(a) => score(a),
        Command::Resolve(a) => {
            print!("{}", resolve_manifest(&a.manifest)?.to_toml());
            Ok(())
        }
    }
}

fn filter(a: FilterArgs) -> Result<()> {
    let d = FilterConfig::default();
    let cfg = FilterConfig {
        max_len: a.max_len.unwrap_or(d.max_len),
        min_len: a.min_len.unwrap_or(d.min_len),
        max_len_ratio: a.max_len_ratio.unwrap_or(d.max_len_ratio),
        expected_script_fraction: a.script_fraction.unwrap_or(d.expected_script_fraction),
        drop_duplicates: !a.keep_duplicates,
    };
    cfg.validate().map_err(CliError::InvalidArgument)?;
    let input = corpus::load_parallel(&a.src, &a.tgt, a.src_lang, a.tgt_lang)?;
    let (kept, report) = corpus::filter_corpus(&input, &cfg);
    corpus::write_parallel(&kept, &a.out_src, &a.out_tgt)?;
    let json = report.to_json();
    if let Some(p) = &a.report {
        fs::write(p, format!("{json}\n")).map_err(io_err(p))?;
    }
    println!("{json}");
    Ok(())
}

fn transliterate(a: TranslitArgs, log: &run::Log) -> Result<()> {
    let map = translit::script_map_for(a.from, a.to)?;
    let text = corpus::load_mono(&a.input, a.from, false)?;
    let mut unmapped = 0;
    let out: Vec<String> = text
        .lines
        .iter()
        .map(|l| {
            let r = translit::transliterate_with(&map, l);
            unmapped += r.unmapped_count;
            r.best().to_string()
        })
        .collect();
    corpus::write_lines(&a.out, out.iter().map(String::as_str))?;
    log.say(format_args!("{} lines, {unmapped} unmapped characters", out.len()));
    Ok(())
}

fn augment(a: AugmentArgs, log: &run::Log) -> Result<()> {
    let low = corpus::load_parallel(&a.low_src, &a.low_tgt, a.source_lang, a.low_lang)?;
    let high = corpus::load_parallel(&a.high_src, &a.high_tgt, a.source_lang, a.high_lang)?;
    let out = translit::augment_related(&low, &high)?;
    corpus::write_parallel(&out, &a.out_src, &a.out_tgt)?;
    log.say(format_args!("{} + {} = {} pairs", low.len(), high.len(), out.len()));
    Ok(())
}

fn bpe(c: BpeCommand, log: &run::Log) -> Result<()> {
    match c {
        BpeCommand::Train {
            inputs,
            merges,
            max_vocab,
            out,
        } => {
            let mut texts = Vec::new();
            for p in &inputs {
                texts.push(fs::read_to_string(p).map_err(io_err(p))?);
            }
            let lines = texts.iter().flat_map(|t| corpus::split_lines(t));
            let model = bpe_train_with(
                lines,
                &BpeConfig {
                    num_merges: merges,
                    max_vocab,
                },
            )?;
            model.save(&out)?;
            log.say(format_args!(
                "{} merges, vocabulary of {}",
                model.merges().len(),
                model.vocab_size()
            ));
            Ok(())
        }
        BpeCommand::Apply {
            model,
            input,
            out,
            ids,
        } => {
            let bpe = BpeModel::load(&model)?;
            let text = fs::read_to_string(&input).map_err(io_err(&input))?;
            let lines: Vec<String> = corpus::split_lines(&text)
                .into_iter()
                .map(|l| {
                    let enc = bpe.encode(l);
                    let parts: Vec<String> = if ids {
                        enc.iter().map(u32::to_string).collect()
                    } else {
                        enc.iter().map(|&i| bpe.token(i).unwrap_or_default().to_string()).collect()
                    };
                    parts.join(" ")
                })
                .collect();
            corpus::write_lines(&out, lines.iter().map(String::as_str))?;
            Ok(())
        }
        BpeCommand::Decode { model, input, out } => {
            let bpe = BpeModel::load(&model)?;
            let text = fs::read_to_string(&input).map_err(io_err(&input))?;
            let mut lines = Vec::new();
            for (i, l) in corpus::split_lines(&text).into_iter().enumerate() {
                let ids = l
                    .split_whitespace()
                    .map(|t| t.parse::<u32>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| CliError::InvalidArgument(format!("{}:{}: {e}", input.display(), i + 1)))?;
                lines.push(bpe.decode(&ids)?);
            }
            corpus::write_lines(&out, lines.iter().map(String::as_str))?;
            Ok(())
        }
    }
}

/// The BPE prefix stored next to a checkpoint.
pub fn sibling_bpe(ckpt: &Path) -> PathBuf {
    ckpt.parent().unwrap_or(Path::new(".")).join(RUN_BPE)
}

fn translate(a: TranslateArgs) -> Result<()> {
    let ck = pipeline::load_checkpoint(&a.ckpt)?;
    let bpe = BpeModel::load(a.bpe.clone().unwrap_or_else(|| sibling_bpe(&a.ckpt)))?;
    let text = fs::read_to_string(&a.input).map_err(io_err(&a.input))?;
    let sources: Vec<String> = corpus::split_lines(&text).into_iter().map(str::to_string).collect();
    let cfg = DecodeConfig {
        beam_size: a.beam,
        length_penalty: a.length_penalty,
        ..DecodeConfig::default()
    };
    let hyps = pipeline::translate_sentences(&ck.model, &bpe, &sources, a.to, &cfg)?;
    corpus::write_lines(&a.out, hyps.iter().map(String::as_str))?;
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let read = |p: &Path| -> Result<Vec<String>> {
        let t = fs::read_to_string(p).map_err(io_err(p))?;
        Ok(corpus::split_lines(&t).into_iter().map(str::to_string).collect())
    };
    let hyps = read(&a.hyp)?;
    let refs = read(&a.reference)?;
    let report = eval::corpus_bleu(&hyps, &refs, a.max_n)?;
    if let Some(p) = &a.report {
        fs::write(p, format!("{}\n", report.to_json())).map_err(io_err(p))?;
    }
    println!("BLEU = {:.2}", report.score);
    Ok(())
}

/// Parses a stopping policy given on the command line.
pub(crate) fn parse_stopping(s: &str) -> Result<Stopping> {
    Ok(s.parse()?)
}
