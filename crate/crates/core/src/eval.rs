//! Corpus-level BLEU with clipped n-gram precision and a brevity penalty.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("nothing to score: no hypothesis tokens")]
    EmptyEvaluation,
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::LengthMismatch { .. } => "eval.length_mismatch",
            EvalError::EmptyEvaluation => "eval.empty_evaluation",
        }
    }
}

fn is_punct_or_symbol(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        ConnectorPunctuation
            | DashPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | OtherPunctuation
            | MathSymbol
            | CurrencySymbol
            | ModifierSymbol
            | OtherSymbol
    )
}

/// Whitespace split, then every punctuation or symbol character becomes its
/// own token regardless of script.
pub fn tokenize_for_bleu(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for c in word.chars() {
            if is_punct_or_symbol(c) {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

pub fn ngram_counts<T: AsRef<str>>(tokens: &[T], n: usize) -> HashMap<Vec<&str>, usize> {
    assert!(n >= 1, "n-gram order must be positive");
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum Smoothing {
    #[default]
    None,
    /// Replaces a zero match count with this value.
    Floor(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    pub score: f64,
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_length: usize,
    pub ref_length: usize,
}

impl BleuReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Sufficient statistics for one order: (clipped matches, hypothesis n-grams).
fn order_stats(hyp: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matches = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matches, hyp.len().saturating_sub(n - 1))
}

pub fn corpus_bleu<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
    max_n: usize,
) -> Result<BleuReport, EvalError> {
    corpus_bleu_with(hypotheses, references, max_n, Smoothing::None)
}

/// Orders for which the hypotheses contain no n-grams at all are left out of
/// the geometric mean, so a corpus of short sentences still scores 100
/// against itself.
pub fn corpus_bleu_with<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<BleuReport, EvalError> {
    if hypotheses.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            hyps: hypotheses.len(),
            refs: references.len(),
        });
    }
    let max_n = max_n.max(1);
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let h = tokenize_for_bleu(h.as_ref());
        let r = tokenize_for_bleu(r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_n {
            let (m, t) = order_stats(&h, &r, n);
            matches[n - 1] += m;
            totals[n - 1] += t;
        }
    }
    if hyp_len == 0 {
        return Err(EvalError::EmptyEvaluation);
    }

    let precisions: Vec<f64> = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    let brevity_penalty = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };

    let effective = totals.iter().take_while(|&&t| t > 0).count();
    let mut log_sum = 0.0;
    let mut zero = false;
    for n in 0..effective {
        let m = match (matches[n], smoothing) {
            (0, Smoothing::Floor(eps)) => eps,
            (0, Smoothing::None) => {
                zero = true;
                break;
            }
            (m, _) => m as f64,
        };
        log_sum += (m / totals[n] as f64).ln();
    }
    let score = if zero {
        0.0
    } else {
        100.0 * brevity_penalty * (log_sum / effective as f64).exp()
    };
    Ok(BleuReport {
        score: score.clamp(0.0, 100.0),
        precisions,
        brevity_penalty,
        hyp_length: hyp_len,
        ref_length: ref_len,
    })
}
