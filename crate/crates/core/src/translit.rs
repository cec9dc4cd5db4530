//! Rule-based transliteration between Brahmi-derived scripts and the
//! related-language augmentation built on it.
//!
//! The Brahmi-derived Unicode blocks (Devanagari through Malayalam) share a
//! common 128-codepoint layout, so a letter in one block maps to the letter at
//! the same offset in another. Codepoints whose counterpart is unassigned in
//! the target block are listed as exceptions and pass through unchanged.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::corpus::{CorpusError, ParallelCorpus, SentencePair};
use crate::lang::{LangCode, Script};

#[derive(Debug, Error)]
pub enum TranslitError {
    #[error("no offset transliteration from {from} ({from_script}) to {to} ({to_script})")]
    UnsupportedScriptPair {
        from: LangCode,
        to: LangCode,
        from_script: Script,
        to_script: Script,
    },
    #[error("{low} and {high} are not in the same language group")]
    GroupMismatch { low: LangCode, high: LangCode },
    #[error("source languages differ: {low} vs {high}")]
    SourceMismatch { low: LangCode, high: LangCode },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

impl TranslitError {
    pub fn code(&self) -> &'static str {
        match self {
            TranslitError::UnsupportedScriptPair { .. } => "translit.unsupported_script_pair",
            TranslitError::GroupMismatch { .. } => "translit.group_mismatch",
            TranslitError::SourceMismatch { .. } => "translit.source_mismatch",
            TranslitError::Corpus(e) => e.code(),
        }
    }
}

/// Offset mapping between two equally sized Unicode blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptMap {
    pub from_block: (u32, u32),
    pub to_block: (u32, u32),
    /// Overrides for the offset rule; `None` means "no counterpart".
    pub exceptions: BTreeMap<char, Option<char>>,
}

fn is_assigned(cp: u32) -> bool {
    char::from_u32(cp).is_some_and(|c| get_general_category(c) != GeneralCategory::Unassigned)
}

impl ScriptMap {
    pub fn between(from: Script, to: Script) -> Option<ScriptMap> {
        if !from.is_brahmi() || !to.is_brahmi() {
            return None;
        }
        let from_block = from.block()?;
        let to_block = to.block()?;
        let mut exceptions = BTreeMap::new();
        for off in 0..=(from_block.1 - from_block.0) {
            let src = from_block.0 + off;
            if is_assigned(src) && !is_assigned(to_block.0 + off) {
                exceptions.insert(char::from_u32(src).unwrap(), None);
            }
        }
        Some(ScriptMap {
            from_block,
            to_block,
            exceptions,
        })
    }

    /// Counterpart of `c`, or `None` if it must pass through.
    pub fn map_char(&self, c: char) -> Option<char> {
        let cp = c as u32;
        if cp < self.from_block.0 || cp > self.from_block.1 || !is_assigned(cp) {
            return None;
        }
        if let Some(&e) = self.exceptions.get(&c) {
            return e;
        }
        char::from_u32(cp - self.from_block.0 + self.to_block.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub text: String,
    pub likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransliterationResult {
    /// Sorted by likelihood, highest first; never empty.
    pub candidates: Vec<Candidate>,
    pub unmapped_count: usize,
}

impl TransliterationResult {
    pub fn best(&self) -> &str {
        &self.candidates[0].text
    }
}

pub fn script_map_for(from: LangCode, to: LangCode) -> Result<ScriptMap, TranslitError> {
    let (fs, ts) = (from.expected_script(), to.expected_script());
    ScriptMap::between(fs, ts).ok_or(TranslitError::UnsupportedScriptPair {
        from,
        to,
        from_script: fs,
        to_script: ts,
    })
}

pub fn transliterate_with(map: &ScriptMap, text: &str) -> TransliterationResult {
    let mut unmapped = 0;
    let out: String = text
        .chars()
        .map(|c| {
            map.map_char(c).unwrap_or_else(|| {
                unmapped += 1;
                c
            })
        })
        .collect();
    TransliterationResult {
        candidates: vec![Candidate {
            text: out,
            likelihood: 1.0,
        }],
        unmapped_count: unmapped,
    }
}

pub fn transliterate(
    text: &str,
    from: LangCode,
    to: LangCode,
) -> Result<TransliterationResult, TranslitError> {
    Ok(transliterate_with(&script_map_for(from, to)?, text))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupName {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageGroup {
    pub name: GroupName,
    pub members: BTreeSet<LangCode>,
}

impl LanguageGroup {
    /// Indo-Aryan languages.
    pub fn a() -> Self {
        use LangCode::*;
        LanguageGroup {
            name: GroupName::A,
            members: [Hi, Ur, Pa, Gu, Mr, Or, Bn, Sd].into_iter().collect(),
        }
    }

    /// Dravidian languages.
    pub fn b() -> Self {
        use LangCode::*;
        LanguageGroup {
            name: GroupName::B,
            members: [Te, Ta, Kn, Ml].into_iter().collect(),
        }
    }
}

pub fn group_of(lang: LangCode) -> Option<LanguageGroup> {
    [LanguageGroup::a(), LanguageGroup::b()]
        .into_iter()
        .find(|g| g.members.contains(&lang))
}

/// Appends `high`, with its target side transliterated into `low`'s script,
/// to a copy of `low`. Output pairs carry `low`'s language codes.
pub fn augment_related(
    low: &ParallelCorpus,
    high: &ParallelCorpus,
) -> Result<ParallelCorpus, TranslitError> {
    if low.source_lang != high.source_lang {
        return Err(TranslitError::SourceMismatch {
            low: low.source_lang,
            high: high.source_lang,
        });
    }
    let same_group = matches!(
        (group_of(low.target_lang), group_of(high.target_lang)),
        (Some(a), Some(b)) if a.name == b.name
    );
    if !same_group {
        return Err(TranslitError::GroupMismatch {
            low: low.target_lang,
            high: high.target_lang,
        });
    }
    let map = script_map_for(high.target_lang, low.target_lang)?;

    let mut out = ParallelCorpus::new(low.source_lang, low.target_lang);
    out.pairs.reserve(low.len() + high.len());
    for p in &low.pairs {
        let mut p = p.clone();
        p.line_no = out.pairs.len() + 1;
        out.pairs.push(p);
    }
    for p in &high.pairs {
        let target = transliterate_with(&map, &p.target).candidates.swap_remove(0).text;
        let line_no = out.pairs.len() + 1;
        out.pairs.push(SentencePair::new(
            p.source.clone(),
            target,
            low.source_lang,
            low.target_lang,
            line_no,
        )?);
    }
    Ok(out)
}
