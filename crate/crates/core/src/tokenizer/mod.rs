//! Byte-pair-encoding subword model with reserved target-language tags.
//!
//! Vocabulary layout: `PAD BOS EOS UNK`, one `<2xx>` tag per [`LangCode`],
//! then the training alphabet (end-of-word marker first, then characters in
//! codepoint order), then each new merge result in learning order.

mod train;

pub use train::{bpe_train, bpe_train_with, initial_symbols, word_counts, BpeConfig};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::SentencePair;
use crate::lang::LangCode;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const END_OF_WORD: &str = "</w>";

const BASE_SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];
pub const NUM_SPECIALS: usize = BASE_SPECIALS.len() + LangCode::ALL.len();

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot learn BPE from an empty corpus")]
    EmptyCorpus,
    #[error("token id {0} is outside the vocabulary")]
    InvalidId(u32),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

impl TokenizerError {
    pub fn code(&self) -> &'static str {
        match self {
            TokenizerError::EmptyCorpus => "tokenizer.empty_corpus",
            TokenizerError::InvalidId(_) => "tokenizer.invalid_id",
            TokenizerError::Io { .. } => "tokenizer.io",
            TokenizerError::Format { .. } => "tokenizer.format",
        }
    }
}

/// Id of the `<2xx>` tag for `lang`.
pub fn tag_id(lang: LangCode) -> u32 {
    (BASE_SPECIALS.len() + lang.index()) as u32
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedSentence {
    pub ids: Vec<u32>,
    pub lang: LangCode,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    /// (left id, right id) -> (rank, merged id)
    ranks: HashMap<(u32, u32), (usize, u32)>,
    alphabet_len: usize,
}

impl BpeModel {
    pub(crate) fn with_alphabet(alphabet: Vec<String>) -> Self {
        let mut m = BpeModel {
            merges: Vec::new(),
            vocab: Vec::new(),
            index: HashMap::new(),
            ranks: HashMap::new(),
            alphabet_len: alphabet.len(),
        };
        let specials = BASE_SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(LangCode::ALL.iter().map(|l| l.tag()));
        for tok in specials.chain(alphabet) {
            m.add_token(tok);
        }
        m
    }

    fn add_token(&mut self, tok: String) -> u32 {
        if let Some(&id) = self.index.get(&tok) {
            return id;
        }
        let id = self.vocab.len() as u32;
        self.index.insert(tok.clone(), id);
        self.vocab.push(tok);
        id
    }

    pub(crate) fn push_merge(&mut self, left: String, right: String) {
        let l = self.index[&left];
        let r = self.index[&right];
        let merged = self.add_token(format!("{left}{right}"));
        self.ranks.entry((l, r)).or_insert((self.merges.len(), merged));
        self.merges.push((left, right));
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Number of initial symbols (characters plus the end-of-word marker).
    pub fn alphabet_len(&self) -> usize {
        self.alphabet_len
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < NUM_SPECIALS
    }

    /// Segments one whitespace-free word, appending ids to `out`.
    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        if let Some(lang) = LangCode::ALL.iter().find(|l| l.tag() == word) {
            out.push(tag_id(*lang));
            return;
        }
        let mut syms: Vec<u32> = word
            .chars()
            .map(|c| {
                let mut buf = [0u8; 4];
                self.id(c.encode_utf8(&mut buf)).unwrap_or(UNK)
            })
            .chain(std::iter::once(self.index[END_OF_WORD]))
            .collect();
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(rank, m)| (rank, (w[0], w[1]), m)))
                .min();
            let Some((_, pair, merged)) = best else { break };
            syms = train::merge_word(&syms, pair, merged);
        }
        out.extend(syms);
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for w in text.split_whitespace() {
            self.encode_word(w, &mut ids);
        }
        ids
    }

    pub fn tokenize(&self, text: &str, lang: LangCode) -> TokenizedSentence {
        TokenizedSentence {
            ids: self.encode(text),
            lang,
        }
    }

    /// Joins subwords back into text. Specials are dropped except `UNK`,
    /// which renders as `<unk>`.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut s = String::new();
        for &id in ids {
            let tok = self.token(id).ok_or(TokenizerError::InvalidId(id))?;
            if id == UNK || !Self::is_special(id) {
                s.push_str(tok);
            }
        }
        let words: Vec<&str> = s.split(END_OF_WORD).map(str::trim).filter(|w| !w.is_empty()).collect();
        Ok(words.join(" "))
    }

    /// Writes `<prefix>.merges` and `<prefix>.vocab`.
    pub fn save(&self, prefix: impl AsRef<Path>) -> Result<(), TokenizerError> {
        let (mp, vp) = paths(prefix.as_ref());
        let mut merges = String::new();
        for (l, r) in &self.merges {
            writeln!(merges, "{l} {r}").unwrap();
        }
        let mut vocab = String::new();
        for (id, tok) in self.vocab.iter().enumerate() {
            writeln!(vocab, "{tok}\t{id}").unwrap();
        }
        write_file(&mp, &merges)?;
        write_file(&vp, &vocab)
    }

    pub fn load(prefix: impl AsRef<Path>) -> Result<Self, TokenizerError> {
        let (mp, vp) = paths(prefix.as_ref());
        let merges_text = read_file(&mp)?;
        let vocab_text = read_file(&vp)?;
        let fmt_err = |path: &Path, line: usize, msg: &str| TokenizerError::Format {
            path: path.to_path_buf(),
            line,
            msg: msg.to_string(),
        };

        let mut vocab = Vec::new();
        for (i, line) in vocab_text.lines().enumerate() {
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| fmt_err(&vp, i + 1, "expected TOKEN<TAB>ID"))?;
            let id: usize = id.parse().map_err(|_| fmt_err(&vp, i + 1, "bad id"))?;
            if id != i {
                return Err(fmt_err(&vp, i + 1, "ids must be contiguous and ascending"));
            }
            vocab.push(tok.to_string());
        }
        let mut merges = Vec::new();
        for (i, line) in merges_text.lines().enumerate() {
            let (l, r) = line
                .split_once(' ')
                .ok_or_else(|| fmt_err(&mp, i + 1, "expected LEFT RIGHT"))?;
            merges.push((l.to_string(), r.to_string()));
        }

        let merged: std::collections::HashSet<String> =
            merges.iter().map(|(l, r)| format!("{l}{r}")).collect();
        if vocab.len() < NUM_SPECIALS {
            return Err(fmt_err(&vp, vocab.len(), "vocabulary lacks reserved tokens"));
        }
        let alphabet: Vec<String> = vocab[NUM_SPECIALS..]
            .iter()
            .take_while(|t| !merged.contains(*t))
            .cloned()
            .collect();
        let mut model = BpeModel::with_alphabet(alphabet);
        for (i, (l, r)) in merges.into_iter().enumerate() {
            if !model.index.contains_key(&l) || !model.index.contains_key(&r) {
                return Err(fmt_err(&mp, i + 1, "merge uses an unknown symbol"));
            }
            model.push_merge(l, r);
        }
        if model.vocab != vocab {
            return Err(fmt_err(&vp, 0, "vocabulary does not match the merge list"));
        }
        Ok(model)
    }
}

fn paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let s = prefix.as_os_str().to_owned();
    let mut m = s.clone();
    m.push(".merges");
    let mut v = s;
    v.push(".vocab");
    (PathBuf::from(m), PathBuf::from(v))
}

fn write_file(path: &Path, body: &str) -> Result<(), TokenizerError> {
    fs::write(path, body).map_err(|source| TokenizerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String, TokenizerError> {
    fs::read_to_string(path).map_err(|source| TokenizerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Prefixes the source with the target-language tag. Not idempotent:
/// tagging twice yields two tags.
pub fn inject_target_token(pair: &SentencePair) -> SentencePair {
    SentencePair {
        source: format!("{} {}", pair.target_lang.tag(), pair.source),
        ..pair.clone()
    }
}
