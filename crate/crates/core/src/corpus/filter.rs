use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{script::script_fraction, ParallelCorpus, SentencePair};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub max_len: usize,
    pub min_len: usize,
    pub max_len_ratio: f64,
    pub expected_script_fraction: f64,
    pub drop_duplicates: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            max_len: 250,
            min_len: 1,
            max_len_ratio: 3.0,
            expected_script_fraction: 0.5,
            drop_duplicates: true,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_len < 1 {
            return Err("min_len must be at least 1".into());
        }
        if self.max_len < self.min_len {
            return Err("max_len must be >= min_len".into());
        }
        if !(self.max_len_ratio >= 1.0) {
            return Err("max_len_ratio must be >= 1.0".into());
        }
        if !(0.0..=1.0).contains(&self.expected_script_fraction) {
            return Err("expected_script_fraction must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// Rejection rules in evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    EmptySide,
    LengthBounds,
    LengthRatio,
    ScriptMismatch,
    Duplicate,
}

impl Rule {
    pub const ALL: [Rule; 5] = [
        Rule::EmptySide,
        Rule::LengthBounds,
        Rule::LengthRatio,
        Rule::ScriptMismatch,
        Rule::Duplicate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rule::EmptySide => "EmptySide",
            Rule::LengthBounds => "LengthBounds",
            Rule::LengthRatio => "LengthRatio",
            Rule::ScriptMismatch => "ScriptMismatch",
            Rule::Duplicate => "Duplicate",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Keep,
    Reject(Rule),
}

/// Applies the per-pair rules; the first failing rule is reported.
///
/// A side with no letters at all counts as script fraction 0.
pub fn filter_pair(pair: &SentencePair, cfg: &FilterConfig) -> Verdict {
    let (src, tgt) = (pair.source.trim(), pair.target.trim());
    if src.is_empty() || tgt.is_empty() {
        return Verdict::Reject(Rule::EmptySide);
    }
    let len_s = src.split_whitespace().count();
    let len_t = tgt.split_whitespace().count();
    let in_bounds = |n: usize| (cfg.min_len..=cfg.max_len).contains(&n);
    if !in_bounds(len_s) || !in_bounds(len_t) {
        return Verdict::Reject(Rule::LengthBounds);
    }
    let ratio = len_s.max(len_t) as f64 / len_s.min(len_t) as f64;
    if ratio > cfg.max_len_ratio {
        return Verdict::Reject(Rule::LengthRatio);
    }
    let threshold = cfg.expected_script_fraction;
    if script_fraction(src, pair.source_lang.expected_script()) < threshold
        || script_fraction(tgt, pair.target_lang.expected_script()) < threshold
    {
        return Verdict::Reject(Rule::ScriptMismatch);
    }
    Verdict::Keep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub input_pairs: usize,
    pub retained_pairs: usize,
    /// Only rules that rejected at least one pair appear.
    pub rejected_by_rule: BTreeMap<String, usize>,
    pub retained_fraction: f64,
}

impl FilterReport {
    pub fn rejected(&self, rule: Rule) -> usize {
        self.rejected_by_rule.get(rule.name()).copied().unwrap_or(0)
    }

    pub fn total_rejected(&self) -> usize {
        self.rejected_by_rule.values().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Filters a corpus, keeping the input order of retained pairs.
///
/// Per-pair rules run in parallel; duplicate detection is a sequential pass
/// over the survivors, so the result does not depend on the worker count.
pub fn filter_corpus(corpus: &ParallelCorpus, cfg: &FilterConfig) -> (ParallelCorpus, FilterReport) {
    let verdicts: Vec<Verdict> = corpus
        .pairs
        .par_iter()
        .map(|p| filter_pair(p, cfg))
        .collect();

    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    let mut counts: BTreeMap<Rule, usize> = BTreeMap::new();
    let mut out = ParallelCorpus::new(corpus.source_lang, corpus.target_lang);
    for (pair, verdict) in corpus.pairs.iter().zip(verdicts) {
        let verdict = match verdict {
            Verdict::Keep
                if cfg.drop_duplicates
                    && !seen.insert((pair.source.as_str(), pair.target.as_str())) =>
            {
                Verdict::Reject(Rule::Duplicate)
            }
            v => v,
        };
        match verdict {
            Verdict::Keep => out.pairs.push(pair.clone()),
            Verdict::Reject(rule) => *counts.entry(rule).or_default() += 1,
        }
    }

    let input_pairs = corpus.len();
    let retained_pairs = out.len();
    let report = FilterReport {
        input_pairs,
        retained_pairs,
        rejected_by_rule: counts
            .into_iter()
            .map(|(r, n)| (r.name().to_string(), n))
            .collect(),
        retained_fraction: if input_pairs == 0 {
            1.0
        } else {
            retained_pairs as f64 / input_pairs as f64
        },
    };
    (out, report)
}
