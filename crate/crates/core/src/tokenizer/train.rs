use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use super::{BpeModel, TokenizerError, END_OF_WORD};
use crate::lang::LangCode;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeConfig {
    pub num_merges: usize,
    /// Stop merging once the vocabulary (specials included) reaches this size.
    pub max_vocab: Option<usize>,
}

/// Counts whitespace-separated words across all lines, skipping `<2xx>` tags.
pub fn word_counts<'a>(lines: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, u64> {
    let tags: HashSet<String> = LangCode::ALL.iter().map(|l| l.tag()).collect();
    let mut counts = BTreeMap::new();
    for line in lines {
        for w in line.split_whitespace() {
            if !tags.contains(w) {
                *counts.entry(w.to_string()).or_insert(0) += 1;
            }
        }
    }
    counts
}

/// Splits a word into its initial symbols: one per character plus the
/// end-of-word marker.
pub fn initial_symbols(word: &str) -> Vec<String> {
    word.chars()
        .map(String::from)
        .chain(std::iter::once(END_OF_WORD.to_string()))
        .collect()
}

type Pair = (u32, u32);

#[derive(PartialEq, Eq)]
struct Candidate {
    count: u64,
    // min-first on the symbol strings breaks ties
    key: Reverse<(String, String)>,
    pair: Pair,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| self.key.cmp(&other.key))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Trainer {
    symbols: Vec<String>,
    symbol_ids: HashMap<String, u32>,
    words: Vec<Vec<u32>>,
    freqs: Vec<u64>,
    counts: HashMap<Pair, u64>,
    occurs_in: HashMap<Pair, HashSet<usize>>,
    heap: BinaryHeap<Candidate>,
}

impl Trainer {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.symbol_ids.get(s) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.symbols.push(s.to_string());
        self.symbol_ids.insert(s.to_string(), id);
        id
    }

    fn candidate(&self, pair: Pair, count: u64) -> Candidate {
        Candidate {
            count,
            key: Reverse((
                self.symbols[pair.0 as usize].clone(),
                self.symbols[pair.1 as usize].clone(),
            )),
            pair,
        }
    }

    fn pop_best(&mut self) -> Option<(Pair, u64)> {
        while let Some(c) = self.heap.pop() {
            let current = self.counts.get(&c.pair).copied().unwrap_or(0);
            if current == c.count {
                return Some((c.pair, current));
            }
            if current > 0 {
                let fresh = self.candidate(c.pair, current);
                self.heap.push(fresh);
            }
        }
        None
    }

    fn apply(&mut self, pair: Pair, merged: u32) {
        let Some(mut affected) = self.occurs_in.remove(&pair).map(|s| s.into_iter().collect::<Vec<_>>())
        else {
            return;
        };
        affected.sort_unstable();
        let mut delta: HashMap<Pair, i64> = HashMap::new();
        for wi in affected {
            let word = &self.words[wi];
            if !word.windows(2).any(|w| (w[0], w[1]) == pair) {
                continue;
            }
            let freq = self.freqs[wi] as i64;
            for w in word.windows(2) {
                *delta.entry((w[0], w[1])).or_default() -= freq;
            }
            let new_word = merge_word(word, pair, merged);
            for w in new_word.windows(2) {
                let p = (w[0], w[1]);
                *delta.entry(p).or_default() += freq;
                self.occurs_in.entry(p).or_default().insert(wi);
            }
            self.words[wi] = new_word;
        }
        let mut changed: Vec<(Pair, i64)> = delta.into_iter().filter(|&(_, d)| d != 0).collect();
        changed.sort_unstable();
        for (p, d) in changed {
            let entry = self.counts.entry(p).or_insert(0);
            *entry = (*entry as i64 + d) as u64;
            let now = *entry;
            if now == 0 {
                self.counts.remove(&p);
            } else if d > 0 {
                let c = self.candidate(p, now);
                self.heap.push(c);
            }
        }
    }
}

/// Merges every left-to-right, non-overlapping occurrence of `pair`.
pub(crate) fn merge_word(word: &[u32], pair: Pair, merged: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(word.len());
    let mut i = 0;
    while i < word.len() {
        if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
            out.push(merged);
            i += 2;
        } else {
            out.push(word[i]);
            i += 1;
        }
    }
    out
}

pub fn bpe_train<'a>(
    lines: impl IntoIterator<Item = &'a str>,
    num_merges: usize,
) -> Result<BpeModel, TokenizerError> {
    bpe_train_with(
        lines,
        &BpeConfig {
            num_merges,
            max_vocab: None,
        },
    )
}

/// Learns merges by repeatedly joining the most frequent adjacent symbol pair.
///
/// Equal counts are broken by the smaller `(left, right)` string pair, and
/// learning stops early once no pair occurs at least twice.
pub fn bpe_train_with<'a>(
    lines: impl IntoIterator<Item = &'a str>,
    cfg: &BpeConfig,
) -> Result<BpeModel, TokenizerError> {
    let counts = word_counts(lines);
    if counts.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }

    let alphabet: Vec<String> = {
        let mut set: Vec<String> = counts
            .keys()
            .flat_map(|w| w.chars().map(String::from))
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        set.sort();
        std::iter::once(END_OF_WORD.to_string()).chain(set).collect()
    };

    let mut t = Trainer {
        symbols: Vec::new(),
        symbol_ids: HashMap::new(),
        words: Vec::with_capacity(counts.len()),
        freqs: Vec::with_capacity(counts.len()),
        counts: HashMap::new(),
        occurs_in: HashMap::new(),
        heap: BinaryHeap::new(),
    };
    for s in &alphabet {
        t.intern(s);
    }
    for (wi, (word, &freq)) in counts.iter().enumerate() {
        let ids: Vec<u32> = initial_symbols(word).iter().map(|s| t.symbol_ids[s]).collect();
        for w in ids.windows(2) {
            let p = (w[0], w[1]);
            *t.counts.entry(p).or_default() += freq;
            t.occurs_in.entry(p).or_default().insert(wi);
        }
        t.words.push(ids);
        t.freqs.push(freq);
    }
    let mut initial: Vec<(Pair, u64)> = t.counts.iter().map(|(&p, &c)| (p, c)).collect();
    initial.sort_unstable();
    for (p, c) in initial {
        let cand = t.candidate(p, c);
        t.heap.push(cand);
    }

    let mut model = BpeModel::with_alphabet(alphabet);
    while model.merges().len() < cfg.num_merges {
        if cfg.max_vocab.is_some_and(|cap| model.vocab_size() >= cap) {
            break;
        }
        let Some((pair, count)) = t.pop_best() else {
            break;
        };
        if count < 2 {
            break;
        }
        let left = t.symbols[pair.0 as usize].clone();
        let right = t.symbols[pair.1 as usize].clone();
        let merged = t.intern(&format!("{left}{right}"));
        t.apply(pair, merged);
        model.push_merge(left, right);
    }
    Ok(model)
}
