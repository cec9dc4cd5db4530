//! Synthetic corpora shared by the integration and acceptance tests.
#![allow(dead_code)]

pub mod oracle;

use mnmt::corpus::ParallelCorpus;
use mnmt::model::{Batch, Mode, TransformerModel};
use mnmt::tokenizer::{BOS, EOS};
use mnmt::LangCode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Lowercase word with at least one vowel that is not a palindrome.
pub fn word(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    loop {
        let n = rng.random_range(min..=max);
        let w: String = (0..n).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
        let rev: String = w.chars().rev().collect();
        if w.chars().any(|c| VOWELS.contains(&c)) && rev != w {
            return w;
        }
    }
}

pub fn reverse(s: &str) -> String {
    s.chars().rev().collect()
}

pub fn upper_vowels(s: &str) -> String {
    s.chars()
        .map(|c| if VOWELS.contains(&c) { c.to_ascii_uppercase() } else { c })
        .collect()
}

pub fn corpus(src: LangCode, tgt: LangCode, pairs: impl IntoIterator<Item = (String, String)>) -> ParallelCorpus {
    ParallelCorpus::from_texts(src, tgt, pairs).unwrap()
}

/// Positional character accuracy: matches over the longer length.
pub fn char_accuracy(hyp: &str, reference: &str) -> (usize, usize) {
    let h: Vec<char> = hyp.chars().collect();
    let r: Vec<char> = reference.chars().collect();
    let hits = h.iter().zip(&r).filter(|(a, b)| a == b).count();
    (hits, h.len().max(r.len()))
}

pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// A tiny two-language word substitution task. Lang1 sentences are drawn
/// from a bigram chain over `vocab` words; Lang2 replaces every word through
/// a fixed dictionary and reverses its letters.
pub struct CipherTask {
    pub l1_words: Vec<String>,
    pub l2_words: Vec<String>,
    next: Vec<Vec<usize>>,
}

impl CipherTask {
    pub fn new(seed: u64, vocab: usize, successors: usize) -> Self {
        let mut r = rng(seed);
        let mut l1_words: Vec<String> = Vec::new();
        while l1_words.len() < vocab {
            let w = word(&mut r, 2, 5);
            if !l1_words.contains(&w) {
                l1_words.push(w);
            }
        }
        let l2_words = l1_words.iter().map(|w| upper_vowels(&reverse(w))).collect();
        let next = (0..vocab)
            .map(|_| (0..successors).map(|_| r.random_range(0..vocab)).collect())
            .collect();
        CipherTask {
            l1_words,
            l2_words,
            next,
        }
    }

    /// Word indices of one Lang1 sentence.
    pub fn sentence(&self, r: &mut ChaCha8Rng, min: usize, max: usize) -> Vec<usize> {
        let n = r.random_range(min..=max);
        let mut s = vec![r.random_range(0..self.l1_words.len())];
        while s.len() < n {
            let succ = &self.next[*s.last().unwrap()];
            s.push(succ[r.random_range(0..succ.len())]);
        }
        s
    }

    pub fn l1(&self, s: &[usize]) -> String {
        s.iter().map(|&i| self.l1_words[i].as_str()).collect::<Vec<_>>().join(" ")
    }

    pub fn l2(&self, s: &[usize]) -> String {
        s.iter().map(|&i| self.l2_words[i].as_str()).collect::<Vec<_>>().join(" ")
    }
}

/// Random batch over ids `4..vocab` with lengths in `1..=max_len`.
pub fn random_batch(rng: &mut ChaCha8Rng, vocab: u32, rows: usize, max_len: usize) -> Batch {
    let mut src = vec![];
    let mut tgt = vec![];
    for _ in 0..rows {
        let n = rng.random_range(1..=max_len);
        src.push((0..n).map(|_| rng.random_range(4..vocab)).collect());
        let m = rng.random_range(1..=max_len);
        let mut t = vec![BOS];
        t.extend((0..m).map(|_| rng.random_range(4..vocab)));
        t.push(EOS);
        tgt.push(t);
    }
    Batch::new(src, tgt).unwrap()
}

/// Compares analytic gradients with central differences of step `h` on
/// every parameter entry. Returns the worst relative error, or the first
/// entry exceeding `tol`.
pub fn finite_difference_check(
    model: &mut TransformerModel,
    batch: &Batch,
    smoothing: f64,
    h: f64,
    tol: f64,
) -> Result<f64, String> {
    let (_, _, grads) = model.loss_and_grads(batch, smoothing, Mode::Eval).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for p in 0..grads.len() {
        let (rows, cols) = model.params()[p].dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = model.params()[p][[r, c]];
                model.params_mut()[p][[r, c]] = orig + h;
                let up = model.loss(batch, smoothing, Mode::Eval).unwrap().0;
                model.params_mut()[p][[r, c]] = orig - h;
                let down = model.loss(batch, smoothing, Mode::Eval).unwrap().0;
                model.params_mut()[p][[r, c]] = orig;
                let num = (up - down) / (2.0 * h);
                let ana = grads[p][[r, c]];
                let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
                if rel >= tol {
                    return Err(format!(
                        "{} [{r},{c}]: analytic {ana} numeric {num}",
                        model.param_names()[p]
                    ));
                }
                worst = worst.max(rel);
            }
        }
    }
    Ok(worst)
}
