//! Run manifests: TOML files that fully determine a pipeline run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::corpus::FilterConfig;
use crate::lang::LangCode;
use crate::model::{TrainHyper, TransformerConfig};
use crate::pipeline::{DecodeConfig, Sampling, Stopping, TrainConfig};

pub const FORMAT_MARKER: &str = "mnmt-run-format 1\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub source_lang: LangCode,
    pub target_lang: LangCode,
    pub train_src: PathBuf,
    pub train_tgt: PathBuf,
    pub valid_src: PathBuf,
    pub valid_tgt: PathBuf,
    pub test_src: Option<PathBuf>,
    pub test_tgt: Option<PathBuf>,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// Adds the pair whose target is `from`, transliterated, to the pair whose
/// target is `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSpec {
    pub target: LangCode,
    pub from: LangCode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerSection {
    pub num_merges: usize,
    pub max_vocab: Option<usize>,
}

impl Default for TokenizerSection {
    fn default() -> Self {
        TokenizerSection {
            num_merges: 8000,
            max_vocab: None,
        }
    }
}

/// Training-loop settings; the seed lives at the top level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub max_updates: Option<u64>,
    pub updates_per_epoch: Option<usize>,
    pub sampling: Sampling,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        ScheduleSection {
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            patience: t.patience,
            min_delta: t.min_delta,
            max_updates: t.max_updates,
            updates_per_epoch: t.updates_per_epoch,
            sampling: t.sampling,
        }
    }
}

impl ScheduleSection {
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            min_delta: self.min_delta,
            max_updates: self.max_updates,
            updates_per_epoch: self.updates_per_epoch,
            sampling: self.sampling,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    pub restore_optimizer: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktranslateSection {
    /// Monolingual text in the first pair's source language.
    pub mono: PathBuf,
    /// Parallel corpus whose target side the backward model translates.
    pub extra_src: PathBuf,
    pub extra_tgt: PathBuf,
    #[serde(default = "one_round")]
    pub rounds: usize,
    #[serde(default = "converge")]
    pub stopping: String,
}

fn one_round() -> usize {
    1
}

fn converge() -> String {
    "converge".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub output_dir: PathBuf,
    pub pairs: Vec<PairSpec>,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub augment: Vec<AugmentSpec>,
    #[serde(default)]
    pub tokenizer: TokenizerSection,
    /// Vocabulary sizes are taken from the trained tokenizer.
    #[serde(default)]
    pub model: TransformerConfig,
    #[serde(default)]
    pub hyper: TrainHyper,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub decode: DecodeConfig,
    #[serde(default)]
    pub finetune: FinetuneSection,
    pub backtranslate: Option<BacktranslateSection>,
}

fn default_seed() -> u64 {
    1
}

fn classify(e: toml::de::Error, path: &Path) -> CliError {
    let msg = e.message().to_string();
    let quoted = || msg.split('`').nth(1).unwrap_or_default().to_string();
    if msg.starts_with("unknown field") {
        CliError::UnknownKey {
            path: path.to_path_buf(),
            key: quoted(),
        }
    } else if msg.starts_with("missing field") {
        CliError::MissingRequired {
            path: path.to_path_buf(),
            key: quoted(),
        }
    } else {
        CliError::TypeError {
            path: path.to_path_buf(),
            msg: e.to_string().lines().collect::<Vec<_>>().join(" "),
        }
    }
}

fn absolutize(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunManifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let m: RunManifest = toml::from_str(text).map_err(|e| classify(e, path))?;
        m.validate()?;
        Ok(m)
    }

    /// Paths become relative to `base` (the manifest's directory).
    pub fn anchor(&mut self, base: &Path) {
        absolutize(base, &mut self.output_dir);
        for p in &mut self.pairs {
            for f in [&mut p.train_src, &mut p.train_tgt, &mut p.valid_src, &mut p.valid_tgt] {
                absolutize(base, f);
            }
            for f in [&mut p.test_src, &mut p.test_tgt]
                .into_iter()
                .flatten()
            {
                absolutize(base, f);
            }
        }
        if let Some(b) = &mut self.backtranslate {
            for f in [&mut b.mono, &mut b.extra_src, &mut b.extra_tgt] {
                absolutize(base, f);
            }
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::InvalidArgument(m));
        if self.pairs.is_empty() {
            return bad("manifest lists no pairs".into());
        }
        for p in &self.pairs {
            if p.test_src.is_some() != p.test_tgt.is_some() {
                return bad(format!("{}-{}: give both sides of the test set", p.source_lang, p.target_lang));
            }
        }
        self.filter.validate().or_else(|m| bad(format!("filter: {m}")))?;
        self.hyper.validate()?;
        self.schedule.train_config(self.seed).validate()?;
        let mut probe = self.model.clone();
        probe.vocab_size_src = 1;
        probe.vocab_size_tgt = 1;
        probe.validate()?;
        if let Some(b) = &self.backtranslate {
            b.stopping.parse::<Stopping>()?;
        }
        Ok(())
    }

    /// TOML with every default written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

/// Reads, validates and anchors a manifest.
pub fn resolve_manifest(path: impl AsRef<Path>) -> Result<RunManifest, CliError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut m = RunManifest::parse(&text, path)?;
    let base = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let base = if base.as_os_str().is_empty() {
        std::env::current_dir().map_err(|source| CliError::Io {
            path: ".".into(),
            source,
        })?
    } else {
        base
    };
    let base = fs::canonicalize(&base).map_err(|source| CliError::Io { path: base, source })?;
    m.anchor(&base);
    Ok(m)
}
