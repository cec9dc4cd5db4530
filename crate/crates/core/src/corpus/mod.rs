//! Parallel and monolingual corpora: loading, writing and noise filtering.

mod filter;
mod script;

pub use filter::{filter_corpus, filter_pair, FilterConfig, FilterReport, Rule, Verdict};
pub use script::{classify_script, is_letter, script_fraction};

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang::{LangCode, UnknownLang};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line count mismatch: source has {source_lines} lines, target has {target_lines}")]
    LineCountMismatch {
        source_lines: usize,
        target_lines: usize,
    },
    #[error("{path}: invalid UTF-8 at byte offset {offset}")]
    Utf8 { path: PathBuf, offset: usize },
    #[error(transparent)]
    UnknownLang(#[from] UnknownLang),
    #[error("line {line_no}: text contains an embedded newline")]
    EmbeddedNewline { line_no: usize },
    #[error("{path}: line {line_no} has no TAB separator")]
    MalformedTsv { path: PathBuf, line_no: usize },
    #[error("pair languages {found_src}-{found_tgt} do not match corpus {want_src}-{want_tgt}")]
    LanguageMismatch {
        want_src: LangCode,
        want_tgt: LangCode,
        found_src: LangCode,
        found_tgt: LangCode,
    },
}

impl CorpusError {
    pub fn code(&self) -> &'static str {
        match self {
            CorpusError::Io { .. } => "corpus.io",
            CorpusError::LineCountMismatch { .. } => "corpus.line_count_mismatch",
            CorpusError::Utf8 { .. } => "corpus.utf8",
            CorpusError::UnknownLang(_) => "corpus.unknown_lang",
            CorpusError::EmbeddedNewline { .. } => "corpus.embedded_newline",
            CorpusError::MalformedTsv { .. } => "corpus.malformed_tsv",
            CorpusError::LanguageMismatch { .. } => "corpus.language_mismatch",
        }
    }
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

/// One aligned sentence pair with its 1-based line number in the input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub source: String,
    pub target: String,
    pub source_lang: LangCode,
    pub target_lang: LangCode,
    pub line_no: usize,
}

impl SentencePair {
    pub fn new(
        source: impl Into<String>,
        target: impl Into<String>,
        source_lang: LangCode,
        target_lang: LangCode,
        line_no: usize,
    ) -> Result<Self> {
        let source = source.into();
        let target = target.into();
        if has_newline(&source) || has_newline(&target) {
            return Err(CorpusError::EmbeddedNewline { line_no });
        }
        Ok(SentencePair {
            source,
            target,
            source_lang,
            target_lang,
            line_no,
        })
    }
}

fn has_newline(s: &str) -> bool {
    s.contains(['\n', '\r'])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub source_lang: LangCode,
    pub target_lang: LangCode,
    pub pairs: Vec<SentencePair>,
}

impl ParallelCorpus {
    pub fn new(source_lang: LangCode, target_lang: LangCode) -> Self {
        ParallelCorpus {
            source_lang,
            target_lang,
            pairs: Vec::new(),
        }
    }

    /// Builds a corpus from raw (source, target) strings, numbering lines from 1.
    pub fn from_texts<S, T>(
        source_lang: LangCode,
        target_lang: LangCode,
        texts: impl IntoIterator<Item = (S, T)>,
    ) -> Result<Self>
    where
        S: Into<String>,
        T: Into<String>,
    {
        let mut corpus = ParallelCorpus::new(source_lang, target_lang);
        for (i, (s, t)) in texts.into_iter().enumerate() {
            corpus
                .pairs
                .push(SentencePair::new(s, t, source_lang, target_lang, i + 1)?);
        }
        Ok(corpus)
    }

    /// Appends a pair, checking it carries this corpus's language codes.
    pub fn push(&mut self, pair: SentencePair) -> Result<()> {
        if pair.source_lang != self.source_lang || pair.target_lang != self.target_lang {
            return Err(CorpusError::LanguageMismatch {
                want_src: self.source_lang,
                want_tgt: self.target_lang,
                found_src: pair.source_lang,
                found_tgt: pair.target_lang,
            });
        }
        self.pairs.push(pair);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Swaps source and target sides.
    pub fn reversed(&self) -> ParallelCorpus {
        ParallelCorpus {
            source_lang: self.target_lang,
            target_lang: self.source_lang,
            pairs: self
                .pairs
                .iter()
                .map(|p| SentencePair {
                    source: p.target.clone(),
                    target: p.source.clone(),
                    source_lang: p.target_lang,
                    target_lang: p.source_lang,
                    line_no: p.line_no,
                })
                .collect(),
        }
    }

    /// Concatenation `self ∪ other`; duplicates are kept and lines renumbered.
    pub fn union(&self, other: &ParallelCorpus) -> Result<ParallelCorpus> {
        let mut out = ParallelCorpus::new(self.source_lang, self.target_lang);
        for p in self.pairs.iter().chain(&other.pairs) {
            let mut p = p.clone();
            p.line_no = out.pairs.len() + 1;
            out.push(p)?;
        }
        Ok(out)
    }

    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.source.as_str())
    }

    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.target.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonoCorpus {
    pub lang: LangCode,
    pub lines: Vec<String>,
}

impl MonoCorpus {
    pub fn new(lang: LangCode, lines: Vec<String>) -> Self {
        MonoCorpus { lang, lines }
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}

fn read_utf8(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    String::from_utf8(bytes).map_err(|e| CorpusError::Utf8 {
        path: path.to_path_buf(),
        offset: e.utf8_error().valid_up_to(),
    })
}

/// Splits on LF; a final newline does not start an extra line. A trailing CR
/// is stripped from each line.
pub fn split_lines(text: &str) -> Vec<&str> {
    if text.is_empty() {
        return Vec::new();
    }
    let body = text.strip_suffix('\n').unwrap_or(text);
    body.split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect()
}

pub fn load_parallel(
    source_path: impl AsRef<Path>,
    target_path: impl AsRef<Path>,
    source_lang: LangCode,
    target_lang: LangCode,
) -> Result<ParallelCorpus> {
    let src = read_utf8(source_path.as_ref())?;
    let tgt = read_utf8(target_path.as_ref())?;
    let src_lines = split_lines(&src);
    let tgt_lines = split_lines(&tgt);
    if src_lines.len() != tgt_lines.len() {
        return Err(CorpusError::LineCountMismatch {
            source_lines: src_lines.len(),
            target_lines: tgt_lines.len(),
        });
    }
    ParallelCorpus::from_texts(source_lang, target_lang, src_lines.into_iter().zip(tgt_lines))
}

/// Reads a single `source<TAB>target` file.
pub fn load_tsv(
    path: impl AsRef<Path>,
    source_lang: LangCode,
    target_lang: LangCode,
) -> Result<ParallelCorpus> {
    let path = path.as_ref();
    let text = read_utf8(path)?;
    let mut corpus = ParallelCorpus::new(source_lang, target_lang);
    for (i, line) in split_lines(&text).into_iter().enumerate() {
        let (s, t) = line.split_once('\t').ok_or_else(|| CorpusError::MalformedTsv {
            path: path.to_path_buf(),
            line_no: i + 1,
        })?;
        corpus
            .pairs
            .push(SentencePair::new(s, t, source_lang, target_lang, i + 1)?);
    }
    Ok(corpus)
}

/// Loads monolingual text; with `drop_empty`, blank-after-trim lines are skipped.
pub fn load_mono(path: impl AsRef<Path>, lang: LangCode, drop_empty: bool) -> Result<MonoCorpus> {
    let text = read_utf8(path.as_ref())?;
    let lines = split_lines(&text)
        .into_iter()
        .filter(|l| !drop_empty || !l.trim().is_empty())
        .map(str::to_string)
        .collect();
    Ok(MonoCorpus::new(lang, lines))
}

pub fn write_lines<'a>(
    path: impl AsRef<Path>,
    lines: impl IntoIterator<Item = &'a str>,
) -> Result<()> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    for line in lines {
        w.write_all(line.as_bytes()).map_err(io_err)?;
        w.write_all(b"\n").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn write_parallel(
    corpus: &ParallelCorpus,
    source_path: impl AsRef<Path>,
    target_path: impl AsRef<Path>,
) -> Result<()> {
    write_lines(source_path, corpus.sources())?;
    write_lines(target_path, corpus.targets())
}
