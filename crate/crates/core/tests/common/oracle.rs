//! Straightforward reference implementations used as test oracles.

use std::collections::BTreeMap;

/// Corpus BLEU over whitespace tokens by explicit n-gram enumeration.
///
/// Orders with no hypothesis n-grams are left out of the geometric mean;
/// any remaining zero precision gives 0.
pub fn brute_force_bleu(hyps: &[String], refs: &[String], max_n: usize) -> f64 {
    let mut matches = vec![0u64; max_n];
    let mut totals = vec![0u64; max_n];
    let (mut c, mut r) = (0u64, 0u64);
    for (h, rf) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.split_whitespace().collect();
        let rf: Vec<&str> = rf.split_whitespace().collect();
        c += h.len() as u64;
        r += rf.len() as u64;
        for n in 1..=max_n {
            if h.len() < n {
                continue;
            }
            let mut seen: Vec<&[&str]> = Vec::new();
            for i in 0..=h.len() - n {
                totals[n - 1] += 1;
                let g = &h[i..i + n];
                if seen.contains(&g) {
                    continue;
                }
                seen.push(g);
                let in_hyp = (0..=h.len() - n).filter(|&j| &h[j..j + n] == g).count();
                let in_ref = if rf.len() < n {
                    0
                } else {
                    (0..=rf.len() - n).filter(|&j| &rf[j..j + n] == g).count()
                };
                matches[n - 1] += in_hyp.min(in_ref) as u64;
            }
        }
    }
    let orders: Vec<usize> = (0..max_n).filter(|&n| totals[n] > 0).collect();
    if orders.iter().any(|&n| matches[n] == 0) {
        return 0.0;
    }
    let product: f64 = orders
        .iter()
        .map(|&n| matches[n] as f64 / totals[n] as f64)
        .product();
    let geo = product.powf(1.0 / orders.len() as f64);
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * geo
}

/// BPE merges recomputed from scratch at every step: the most frequent
/// adjacent pair wins, ties go to the smallest `(left, right)`, and learning
/// stops when no pair occurs twice.
pub fn naive_bpe_merges(lines: &[String], num_merges: usize) -> Vec<(String, String)> {
    let mut words: BTreeMap<Vec<String>, u64> = BTreeMap::new();
    for line in lines {
        for w in line.split_whitespace() {
            let mut syms: Vec<String> = w.chars().map(String::from).collect();
            syms.push("</w>".into());
            *words.entry(syms).or_insert(0) += 1;
        }
    }
    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (w, f) in &words {
            for p in w.windows(2) {
                *counts.entry((p[0].clone(), p[1].clone())).or_insert(0) += f;
            }
        }
        let mut best: Option<(&(String, String), u64)> = None;
        for (pair, &n) in &counts {
            if best.is_none_or(|(_, b)| n > b) {
                best = Some((pair, n));
            }
        }
        let Some((pair, n)) = best else { break };
        if n < 2 {
            break;
        }
        let pair = pair.clone();
        let joined = format!("{}{}", pair.0, pair.1);
        let mut next = BTreeMap::new();
        for (w, f) in words {
            let mut out = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && w[i] == pair.0 && w[i + 1] == pair.1 {
                    out.push(joined.clone());
                    i += 2;
                } else {
                    out.push(w[i].clone());
                    i += 1;
                }
            }
            *next.entry(out).or_insert(0) += f;
        }
        words = next;
        merges.push(pair);
    }
    merges
}
