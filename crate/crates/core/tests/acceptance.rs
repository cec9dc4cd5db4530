//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails. Criterion numbers given as arguments
//! restrict the run.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::oracle::{brute_force_bleu, naive_bpe_merges};
use common::*;
use mnmt::corpus::{filter_corpus, FilterConfig, ParallelCorpus, Rule, SentencePair};
use mnmt::eval::corpus_bleu;
use mnmt::model::attention::attend;
use mnmt::model::{Batch, Mat, Mode, TrainHyper, TransformerConfig, TransformerModel};
use mnmt::pipeline::*;
use mnmt::tokenizer::bpe_train;
use mnmt::translit::{augment_related, transliterate};
use mnmt::LangCode::{self, Bn, En, Hi, Or, Ta};
use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let e = start.elapsed();
    ensure(e < limit, format!("took {e:.1?}, limit {limit:?}"))
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn c01_bleu_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for k in 0..50u64 {
        let mut r = rng(100 + k);
        let vocab: Vec<String> = (0..r.random_range(2..=30)).map(|_| word(&mut r, 1, 4)).collect();
        let n = r.random_range(1..=20);
        let max_len = if k % 5 == 0 { 3 } else { 12 };
        let refs: Vec<String> = (0..n)
            .map(|_| {
                let len = r.random_range(1..=max_len);
                (0..len).map(|_| vocab[r.random_range(0..vocab.len())].clone()).collect::<Vec<_>>().join(" ")
            })
            .collect();
        let hyps: Vec<String> = refs
            .iter()
            .map(|rf| {
                let mut w: Vec<String> = rf.split(' ').map(String::from).collect();
                for _ in 0..r.random_range(0..=3) {
                    match r.random_range(0..3) {
                        0 if w.len() > 1 => {
                            w.remove(r.random_range(0..w.len()));
                        }
                        1 => {
                            let i = r.random_range(0..w.len());
                            w[i] = vocab[r.random_range(0..vocab.len())].clone();
                        }
                        _ => w.insert(r.random_range(0..=w.len()), vocab[r.random_range(0..vocab.len())].clone()),
                    }
                }
                w.join(" ")
            })
            .collect();
        let got = corpus_bleu(&hyps, &refs, 4).map_err(err)?.score;
        let want = brute_force_bleu(&hyps, &refs, 4);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-9, format!("corpus {k}: {got} vs oracle {want}"))?;
        let id = corpus_bleu(&refs, &refs, 4).map_err(err)?.score;
        ensure(
            id == 100.0 && format!("{id:.2}") == "100.00",
            format!("corpus {k}: identity scores {id}"),
        )?;
    }
    within(start, Duration::from_secs(5))?;
    Ok(format!("50 corpora, max |diff| {worst:.1e}, identity 100.00"))
}

fn c02_bpe_oracle() -> Outcome {
    let start = Instant::now();
    let mut total_merges = 0;
    for k in 0..20u64 {
        let mut r = rng(200 + k);
        let letters: Vec<char> = if k % 4 == 3 {
            (0x0915u32..0x0939).filter_map(char::from_u32).collect()
        } else {
            ('a'..='z').take(r.random_range(4..=26)).collect()
        };
        let pool: Vec<String> = (0..r.random_range(20..=150))
            .map(|_| {
                let n = r.random_range(1..=7);
                (0..n).map(|_| letters[r.random_range(0..letters.len())]).collect()
            })
            .collect();
        let mut lines = Vec::new();
        let mut words = 0;
        let budget = r.random_range(100..=1000);
        while words < budget {
            let n = r.random_range(1..=12).min(budget - words);
            // squared index skews frequencies towards the head of the pool
            let line: Vec<&str> = (0..n)
                .map(|_| {
                    let u: f64 = r.random();
                    pool[((u * u) * pool.len() as f64) as usize].as_str()
                })
                .collect();
            words += n;
            lines.push(line.join(" "));
        }
        let merges = r.random_range(0..=200);
        let model = bpe_train(lines.iter().map(String::as_str), merges).map_err(err)?;
        let oracle = naive_bpe_merges(&lines, merges);
        ensure(
            model.merges() == oracle.as_slice(),
            format!("corpus {k}: {} merges vs oracle {}", model.merges().len(), oracle.len()),
        )?;
        total_merges += oracle.len();
        for line in &lines {
            let back = model.decode(&model.encode(line)).map_err(err)?;
            ensure(&back == line, format!("corpus {k}: {line:?} decodes to {back:?}"))?;
        }
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("20 corpora, {total_merges} merges equal to the oracle, round trips exact"))
}

fn c03_gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let cfg = TransformerConfig::tiny(14, 2, 2, 16, 16);
    let mut model = TransformerModel::new(cfg, 23).map_err(err)?;
    let batch = random_batch(&mut rng(2), 14, 2, 3);
    let worst = finite_difference_check(&mut model, &batch, 0.1, 1e-4, 1e-4)?;
    within(start, Duration::from_secs(120))?;
    Ok(format!(
        "{} parameters, worst relative error {worst:.1e}",
        model.num_parameters()
    ))
}

fn c04_causality_normalization() -> Outcome {
    let model = TransformerModel::new(TransformerConfig::tiny(24, 2, 2, 16, 32), 41).map_err(err)?;
    let mut r = rng(44);
    let batch = random_batch(&mut r, 24, 3, 7);
    let width = batch.tgt_width();
    let base = model.forward(&batch, Mode::Eval).map_err(err)?;
    let mut checks = 0;
    for b in 0..batch.len() {
        for t in 1..batch.tgt[b].len() - 1 {
            let mut tgt = batch.tgt.clone();
            tgt[b][t] = if tgt[b][t] == 4 { 5 } else { 4 };
            let alt = model
                .forward(&Batch::new(batch.src.clone(), tgt).map_err(err)?, Mode::Eval)
                .map_err(err)?;
            for row in 0..base.nrows() {
                let (rb, pos) = (row / width, row % width);
                let must_match = rb != b || pos < t;
                if must_match && base.row(row) != alt.row(row) {
                    return Err(format!("sequence {b}: input {t} moved output {pos} of sequence {rb}"));
                }
            }
            checks += 1;
        }
    }
    let mut worst: f64 = 0.0;
    for row in base.rows() {
        worst = worst.max((row.iter().map(|x| x.exp()).sum::<f64>() - 1.0).abs());
    }
    let q = Array2::from_shape_fn((6, 8), |_| r.random_range(-3.0..3.0));
    let k = Array2::from_shape_fn((6, 8), |_| r.random_range(-3.0..3.0));
    let (_, p) = attend(q.view(), k.view(), k.view(), |i, j| j > i);
    for (i, row) in p.rows().into_iter().enumerate() {
        worst = worst.max((row.sum() - 1.0).abs());
        ensure(row.iter().skip(i + 1).all(|&x| x == 0.0), "attention to a future key")?;
    }
    ensure(worst <= 1e-6, format!("row sum off by {worst:e}"))?;
    Ok(format!("{checks} perturbations isolated, max |row sum - 1| {worst:.1e}"))
}

fn toy_task(seed: u64, n: usize) -> ParallelCorpus {
    let mut r = rng(seed);
    corpus(
        En,
        Hi,
        (0..n).map(|_| {
            let w: Vec<String> = (0..r.random_range(1..=4)).map(|_| word(&mut r, 2, 5)).collect();
            let src = w.join(" ");
            (src.clone(), reverse(&src))
        }),
    )
}

fn c06_single_pair_degeneracy() -> Outcome {
    let train = toy_task(61, 120);
    let valid = toy_task(62, 30);
    let text: Vec<&str> = train.sources().chain(train.targets()).collect();
    let bpe = bpe_train(text, 30).map_err(err)?;
    let d = PairDataset::from_corpus(0, &train, &bpe, 1.0, 64);
    let v = PairDataset::from_corpus(0, &valid, &bpe, 1.0, 64);
    let mut cfg = TransformerConfig::tiny(bpe.vocab_size(), 1, 2, 16, 32);
    cfg.dropout = 0.1;
    let hyper = TrainHyper {
        warmup_updates: 10,
        peak_lr: 3e-3,
        update_frequency: 2,
        clip_norm: Some(1.0),
        ..Default::default()
    };
    let tcfg = TrainConfig {
        batch_size: 16,
        max_epochs: 4,
        seed: 6,
        ..Default::default()
    };
    let model = TransformerModel::new(cfg, 6).map_err(err)?;
    let multi = train_multiway(model.clone(), std::slice::from_ref(&d), std::slice::from_ref(&v), &hyper, &tcfg, &mut |_| {})
        .map_err(err)?;
    let plain = train_plain(model, &d, Some(&v), &hyper, &tcfg).map_err(err)?;
    let bits = |l: &[f64]| l.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    ensure(!multi.update_losses.is_empty(), "no updates")?;
    ensure(bits(&multi.update_losses) == bits(&plain.update_losses), "per-update losses differ")?;
    ensure(multi.records == plain.records, "epoch records differ")?;
    ensure(multi.last.model == plain.last.model, "final parameters differ")?;
    ensure(multi.best.model == plain.best.model, "best parameters differ")?;
    Ok(format!(
        "{} updates and {} epoch records bit-identical",
        multi.update_losses.len(),
        multi.records.len()
    ))
}

fn c05_direction_control() -> Outcome {
    let start = Instant::now();
    let mut r = rng(505);
    let mut seen = std::collections::HashSet::new();
    let mut fresh = |r: &mut _| loop {
        let w = word(r, 3, 7);
        if seen.insert(w.clone()) {
            return w;
        }
    };
    let rev: Vec<String> = (0..2000).map(|_| fresh(&mut r)).collect();
    let up: Vec<String> = (0..2000).map(|_| fresh(&mut r)).collect();
    let held: Vec<String> = (0..200).map(|_| fresh(&mut r)).collect();
    let c_rev = corpus(En, Hi, rev.iter().map(|w| (w.clone(), reverse(w))));
    let c_up = corpus(En, Ta, up.iter().map(|w| (w.clone(), upper_vowels(w))));
    let dev_rev = corpus(En, Hi, held[..50].iter().map(|w| (w.clone(), reverse(w))));
    let dev_up = corpus(En, Ta, held[..50].iter().map(|w| (w.clone(), upper_vowels(w))));
    let text: Vec<&str> = c_rev.sources().chain(c_rev.targets()).chain(c_up.targets()).collect();
    let bpe = bpe_train(text, 0).map_err(|e| e.to_string())?;

    let mut cfg = TransformerConfig::tiny(bpe.vocab_size(), 2, 4, 64, 128);
    cfg.dropout = 0.1;
    let hyper = TrainHyper {
        warmup_updates: 300,
        peak_lr: 2e-3,
        update_frequency: 1,
        ..Default::default()
    };
    let tcfg = TrainConfig {
        batch_size: 32,
        max_epochs: env_usize("C05_EPOCHS", 12),
        patience: 3,
        seed: 5,
        ..Default::default()
    };
    let ds = [
        PairDataset::from_corpus(0, &c_rev, &bpe, 1.0, 64),
        PairDataset::from_corpus(1, &c_up, &bpe, 1.0, 64),
    ];
    let dv = [
        PairDataset::from_corpus(0, &dev_rev, &bpe, 1.0, 64),
        PairDataset::from_corpus(1, &dev_up, &bpe, 1.0, 64),
    ];
    let model = TransformerModel::new(cfg, 5).map_err(|e| e.to_string())?;
    let out = train_multiway(model, &ds, &dv, &hyper, &tcfg, &mut |_| {})
        .map_err(|e| e.to_string())?;
    let model = out.best.model;

    let dec = DecodeConfig::greedy();
    let mut lang_ok = 0;
    let mut acc = [(0usize, 0usize); 2];
    for (k, (lang, f)) in [(Hi, reverse as fn(&str) -> String), (Ta, upper_vowels)].into_iter().enumerate() {
        let hyps = translate_sentences(&model, &bpe, &held, lang, &dec).map_err(|e| e.to_string())?;
        for (x, h) in held.iter().zip(&hyps) {
            let want = f(x);
            let other = if k == 0 { upper_vowels(x) } else { reverse(x) };
            if edit_distance(h, &want) < edit_distance(h, &other) {
                lang_ok += 1;
            }
            let (hit, n) = char_accuracy(h, &want);
            acc[k].0 += hit;
            acc[k].1 += n;
        }
    }
    let lang_acc = lang_ok as f64 / 400.0;
    let tok = acc.map(|(h, n)| h as f64 / n as f64);
    let detail = format!(
        "tag accuracy {:.2}%, token accuracy reverse {:.2}% / vowel-upper {:.2}%, {} updates, {:.0?}",
        100.0 * lang_acc,
        100.0 * tok[0],
        100.0 * tok[1],
        out.last.state.step,
        start.elapsed()
    );
    ensure(lang_acc >= 0.99 && tok[0] >= 0.95 && tok[1] >= 0.95, detail.clone())?;
    within(start, Duration::from_secs(15 * 60))?;
    Ok(detail)
}

fn c08_backtranslation() -> Outcome {
    let start = Instant::now();
    let task = CipherTask::new(808, env_usize("C08_VOCAB", 120), 4);
    let mut r = rng(809);
    let pairs = |n: usize, r: &mut _| -> ParallelCorpus {
        corpus(En, Hi, (0..n).map(|_| {
            let s = task.sentence(r, 3, 8);
            (task.l1(&s), task.l2(&s))
        }))
    };
    let c_p = pairs(300, &mut r);
    let c_t = pairs(300, &mut r);
    let dev = pairs(100, &mut r);
    let test = pairs(200, &mut r);
    let mono = mnmt::corpus::MonoCorpus::new(En, (0..3000).map(|_| task.l1(&task.sentence(&mut r, 3, 8))).collect());
    let mut text: Vec<&str> = c_p.sources().chain(c_p.targets()).collect();
    text.extend(mono.lines.iter().map(String::as_str));
    let bpe = bpe_train(text, env_usize("C08_MERGES", 400)).map_err(|e| e.to_string())?;

    let mut model = TransformerConfig::tiny(1, 2, 4, 64, 128);
    model.dropout = 0.1;
    let cfg = |stopping| BacktranslateConfig {
        rounds: 1,
        stopping,
        model: model.clone(),
        hyper: TrainHyper {
            warmup_updates: 200,
            peak_lr: 2e-3,
            update_frequency: 1,
            ..Default::default()
        },
        train: TrainConfig {
            batch_size: 32,
            max_epochs: 200,
            seed: 8,
            ..Default::default()
        },
        decode: DecodeConfig::greedy(),
    };
    let corpora = BtCorpora {
        parallel: &c_p,
        mono: &mono,
        extra: &c_t,
        dev: &dev,
        test: &test,
    };
    let conv = cfg(Stopping::converge());
    let bt = backtranslate_iterate(corpora, &bpe, &conv).map_err(|e| e.to_string())?;
    let round = &bt.rounds[0];
    ensure(
        round.tr_bwd_len == c_p.len() + mono.len() && round.tr_fwd_len == c_p.len() + c_t.len(),
        format!("bookkeeping: |Tr<-| = {}, |Tr->| = {}", round.tr_bwd_len, round.tr_fwd_len),
    )?;
    // baseline backward model: same schedule and seed, authentic pairs only
    let base = train_direction(&c_p.reversed(), &dev.reversed(), &bpe, &conv, conv.train.seed + 1, &mut |_| {})
        .map_err(|e| e.to_string())?;
    let base_bleu = evaluate_bleu(&base, &bpe, &test.reversed(), &conv.decode).map_err(|e| e.to_string())?.0.score;

    let short = cfg(Stopping::Budget { updates: env_usize("C08_BUDGET", 100) as u64 });
    let bt_short = backtranslate_iterate(corpora, &bpe, &short).map_err(|e| e.to_string())?;
    let detail = format!(
        "backward BLEU {:.2} with BT vs {:.2} baseline; converge {:.2} vs budget {:.2}; forward {:.2} -> {:.2}; {:.0?}",
        round.bleu_bwd,
        base_bleu,
        round.bleu_bwd,
        bt_short.rounds[0].bleu_bwd,
        bt.trace[0].bleu,
        round.bleu_fwd,
        start.elapsed()
    );
    eprintln!("{detail}");
    ensure(round.bleu_bwd >= base_bleu + 1.0, format!("no BT gain: {detail}"))?;
    ensure(round.bleu_bwd >= bt_short.rounds[0].bleu_bwd, format!("converge < budget: {detail}"))?;
    within(start, Duration::from_secs(30 * 60))?;
    Ok(detail)
}

fn domain_corpus(seed: u64, vocab: &[String], range: std::ops::Range<usize>, n: usize) -> ParallelCorpus {
    let mut r = rng(seed);
    corpus(
        En,
        Hi,
        (0..n).map(|_| {
            let w: Vec<&str> = (0..r.random_range(2..=5))
                .map(|_| vocab[r.random_range(range.clone())].as_str())
                .collect();
            let src = w.join(" ");
            (src.clone(), upper_vowels(&reverse(&src)))
        }),
    )
}

fn c07_domain_adaptation() -> Outcome {
    let mut r = rng(70);
    let mut vocab: Vec<String> = Vec::new();
    while vocab.len() < 80 {
        let w = word(&mut r, 2, 5);
        if !vocab.contains(&w) {
            vocab.push(w);
        }
    }
    let general = domain_corpus(71, &vocab, 0..50, 800);
    let in_train = domain_corpus(72, &vocab, 40..80, 200);
    let in_valid = domain_corpus(73, &vocab, 40..80, 60);
    let text: Vec<&str> = general
        .sources()
        .chain(general.targets())
        .chain(in_train.sources())
        .chain(in_train.targets())
        .collect();
    let bpe = bpe_train(text, 60).map_err(err)?;
    let max_pos = 64;
    let ds = PairDataset::from_corpus(0, &general, &bpe, 1.0, max_pos);
    let in_ds = PairDataset::from_corpus(0, &in_train, &bpe, 1.0, max_pos);
    let in_dv = PairDataset::from_corpus(0, &in_valid, &bpe, 1.0, max_pos);
    let mut cfg = TransformerConfig::tiny(bpe.vocab_size(), 1, 2, 32, 64);
    cfg.dropout = 0.1;
    let hyper = TrainHyper {
        warmup_updates: 50,
        peak_lr: 2e-3,
        update_frequency: 1,
        ..Default::default()
    };
    let tcfg = TrainConfig {
        batch_size: 32,
        max_epochs: 6,
        seed: 7,
        ..Default::default()
    };
    let model = TransformerModel::new(cfg, 7).map_err(err)?;
    let base = train_multiway(model, &[ds], &[], &hyper, &tcfg, &mut |_| {}).map_err(err)?.last;
    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("base.ckpt");
    save_checkpoint(&base, &path).map_err(err)?;
    let base = load_checkpoint(&path).map_err(err)?;

    let eps = hyper.label_smoothing;
    let base_loss = evaluate_loss(&base.model, &in_dv, eps, 64).map_err(err)?.0;
    let adapt = |epochs: usize| {
        let cfg = TrainConfig {
            max_epochs: epochs,
            ..tcfg.clone()
        };
        domain_adapt(
            &base,
            std::slice::from_ref(&in_ds),
            std::slice::from_ref(&in_dv),
            &hyper,
            &cfg,
            AdaptOptions::default(),
            &mut |_| {},
        )
    };
    let zero = adapt(0).map_err(err)?;
    ensure(zero.last.model == base.model, "x = 0 changed the parameters")?;
    ensure(zero.best.model == base.model, "x = 0 changed the best snapshot")?;
    ensure(zero.update_losses.is_empty(), "x = 0 took an update")?;
    let mut detail = format!("base in-domain loss {base_loss:.4}");
    for x in [1, 3] {
        let out = adapt(x).map_err(err)?;
        let loss = evaluate_loss(&out.last.model, &in_dv, eps, 64).map_err(err)?.0;
        detail.push_str(&format!("; x = {x}: {loss:.4}"));
        ensure(loss < base_loss, format!("no reduction: {detail}"))?;
    }
    Ok(format!("{detail}; x = 0 bit-exact"))
}

const DEVANAGARI: (u32, u32) = (0x0900, 0x097F);
const BENGALI: (u32, u32) = (0x0980, 0x09FF);
const ORIYA: (u32, u32) = (0x0B00, 0x0B7F);

fn assigned(cp: u32) -> bool {
    use unicode_general_category::{get_general_category, GeneralCategory};
    char::from_u32(cp).is_some_and(|c| get_general_category(c) != GeneralCategory::Unassigned)
}

fn c09_transliteration() -> Outcome {
    let scripts = [(Hi, DEVANAGARI), (Bn, BENGALI), (Or, ORIYA)];
    let mut checked = 0;
    for &(x, bx) in &scripts {
        for &(y, by) in &scripts {
            if x == y {
                continue;
            }
            for off in 0..=(bx.1 - bx.0) {
                if !assigned(bx.0 + off) || !assigned(by.0 + off) {
                    continue;
                }
                let c = char::from_u32(bx.0 + off).unwrap().to_string();
                let want = char::from_u32(by.0 + off).unwrap().to_string();
                let there = transliterate(&c, x, y).map_err(err)?;
                ensure(there.best() == want, format!("{x}->{y} U+{:04X}: got {:?}", bx.0 + off, there.best()))?;
                let back = transliterate(there.best(), y, x).map_err(err)?;
                ensure(back.best() == c, format!("{x}->{y}->{x} U+{:04X}: got {:?}", bx.0 + off, back.best()))?;
                checked += 1;
            }
        }
    }
    ensure(checked > 300, format!("only {checked} codepoints have counterparts"))?;

    let hi_words = ["नमस्ते", "भारत", "किताब", "पानी", "घर"];
    let mut r = rng(90);
    let sent = |ws: &[&str], r: &mut rand_chacha::ChaCha8Rng| -> String {
        (0..r.random_range(1..=4)).map(|_| ws[r.random_range(0..ws.len())]).collect::<Vec<_>>().join(" ")
    };
    let high = corpus(En, Hi, (0..50).map(|i| (format!("s{i} x"), sent(&hi_words, &mut r))));
    let bn_words = ["আমার", "সোনার", "বাংলা"];
    let low = corpus(En, Bn, (0..30).map(|i| (format!("t{i} y"), sent(&bn_words, &mut r))));
    let out = augment_related(&low, &high).map_err(err)?;
    ensure(out.len() == low.len() + high.len(), format!("|out| = {}", out.len()))?;
    ensure(out.source_lang == En && out.target_lang == Bn, "languages")?;
    for (i, p) in out.pairs.iter().enumerate() {
        let (src, tgt) = if i < low.len() {
            (low.pairs[i].source.clone(), low.pairs[i].target.clone())
        } else {
            let h = &high.pairs[i - low.len()];
            (h.source.clone(), transliterate(&h.target, Hi, Bn).map_err(err)?.best().to_string())
        };
        ensure(p.source == src && p.target == tgt, format!("pair {i} differs"))?;
        ensure(p.line_no == i + 1, format!("pair {i} has line {}", p.line_no))?;
    }
    Ok(format!(
        "{checked} codepoint round trips; augment {} + {} = {}",
        low.len(),
        high.len(),
        out.len()
    ))
}

fn deva_word(r: &mut rand_chacha::ChaCha8Rng) -> String {
    (0..r.random_range(2..=5))
        .map(|_| char::from_u32(0x0915 + r.random_range(0..26)).unwrap())
        .collect()
}

fn c10_filtering() -> Outcome {
    let mut r = rng(1000);
    let mut seen = std::collections::HashSet::new();
    let mut clean = Vec::new();
    while clean.len() < 900 {
        let n: usize = r.random_range(3..=8);
        let m = r.random_range(n.div_ceil(2usize)..=(n * 2).min(12));
        let s: Vec<String> = (0..n).map(|_| word(&mut r, 2, 6)).collect();
        let t: Vec<String> = (0..m).map(|_| deva_word(&mut r)).collect();
        let pair = (s.join(" "), t.join(" "));
        if seen.insert(pair.clone()) {
            clean.push(pair);
        }
    }
    // (pair, expected rule); 20 of each class
    let mut planted: Vec<((String, String), Rule)> = Vec::new();
    for i in 0..20 {
        let s = word(&mut r, 2, 6);
        planted.push(if i % 2 == 0 {
            ((String::new(), deva_word(&mut r)), Rule::EmptySide)
        } else {
            ((s, "   ".into()), Rule::EmptySide)
        });
        let long: Vec<String> = (0..260).map(|_| word(&mut r, 2, 4)).collect();
        let long_t: Vec<String> = (0..200).map(|_| deva_word(&mut r)).collect();
        planted.push(((long.join(" "), long_t.join(" ")), Rule::LengthBounds));
        let short = word(&mut r, 2, 5);
        let wide: Vec<String> = (0..r.random_range(4..=9)).map(|_| deva_word(&mut r)).collect();
        planted.push(((short, wide.join(" ")), Rule::LengthRatio));
        let s: Vec<String> = (0..4).map(|_| word(&mut r, 2, 5)).collect();
        let t: Vec<String> = (0..4).map(|_| word(&mut r, 2, 5)).collect();
        planted.push(((s.join(" "), t.join(" ")), Rule::ScriptMismatch));
    }
    let mut rows: Vec<(String, String, Option<Rule>)> = clean.iter().map(|(s, t)| (s.clone(), t.clone(), None)).collect();
    for ((s, t), rule) in planted {
        let at = r.random_range(0..=rows.len());
        rows.insert(at, (s, t, Some(rule)));
    }
    let mut dups = 0;
    while dups < 20 {
        let at = r.random_range(1..=rows.len());
        let earlier: Vec<usize> = (0..at).filter(|&i| rows[i].2.is_none()).collect();
        let Some(&src) = earlier.choose(&mut r) else { continue };
        let (s, t) = (rows[src].0.clone(), rows[src].1.clone());
        rows.insert(at, (s, t, Some(Rule::Duplicate)));
        dups += 1;
    }
    ensure(rows.len() == 1000, format!("{} rows", rows.len()))?;
    let input = corpus(En, Hi, rows.iter().map(|(s, t, _)| (s.clone(), t.clone())));
    let cfg = FilterConfig::default();
    let (kept, report) = filter_corpus(&input, &cfg);
    ensure(report.retained_pairs == 900 && kept.len() == 900, format!("retained {}", kept.len()))?;
    for rule in Rule::ALL {
        let want = rows.iter().filter(|x| x.2 == Some(rule)).count();
        ensure(report.rejected(rule) == want, format!("{rule}: {} vs {want}", report.rejected(rule)))?;
    }
    let expected: Vec<&SentencePair> = input
        .pairs
        .iter()
        .zip(&rows)
        .filter(|(_, row)| row.2.is_none())
        .map(|(p, _)| p)
        .collect();
    ensure(kept.pairs.iter().eq(expected), "retained pairs are not the clean ones in input order")?;
    let (again, report2) = filter_corpus(&kept, &cfg);
    ensure(again == kept && report2.total_rejected() == 0, "not idempotent")?;
    Ok(format!("900 retained, {:?}", report.rejected_by_rule))
}

fn c11_checkpoint_round_trip() -> Outcome {
    let train = toy_task(111, 60);
    let text: Vec<&str> = train.sources().chain(train.targets()).collect();
    let bpe = bpe_train(text, 20).map_err(err)?;
    let d = PairDataset::from_corpus(0, &train, &bpe, 1.0, 64);
    let mut cfg = TransformerConfig::tiny(bpe.vocab_size(), 2, 2, 16, 32);
    cfg.dropout = 0.1;
    let hyper = TrainHyper {
        warmup_updates: 5,
        update_frequency: 1,
        ..Default::default()
    };
    let tcfg = TrainConfig {
        batch_size: 16,
        max_epochs: 2,
        ..Default::default()
    };
    let model = TransformerModel::new(cfg, 11).map_err(err)?;
    let ck = train_multiway(model, std::slice::from_ref(&d), &[], &hyper, &tcfg, &mut |_| {})
        .map_err(err)?
        .last;
    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&ck, &path).map_err(err)?;
    let loaded = load_checkpoint(&path).map_err(err)?;
    let probe = d.batch(&(0..d.len().min(8)).collect::<Vec<_>>()).map_err(err)?;
    let a: Mat = ck.model.forward(&probe, Mode::Eval).map_err(err)?;
    let b: Mat = loaded.model.forward(&probe, Mode::Eval).map_err(err)?;
    ensure(
        a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()),
        "probe logits differ",
    )?;
    ensure(loaded.state == ck.state && loaded.provenance == ck.provenance, "state differs")?;
    ensure(
        loaded.optimizer.as_ref().map(|o| o.step) == ck.optimizer.as_ref().map(|o| o.step),
        "optimizer step differs",
    )?;

    let bytes = std::fs::read(&path).map_err(err)?;
    let bad = dir.path().join("bad.ckpt");
    let mut cases: Vec<(String, Vec<u8>)> = vec![
        ("empty".into(), vec![]),
        ("magic".into(), [b"XXXXXXXX".as_slice(), &bytes[8..]].concat()),
    ];
    for cut in [4, 20, bytes.len() / 2, bytes.len() - 1] {
        cases.push((format!("truncated at {cut}"), bytes[..cut].to_vec()));
    }
    for at in [9, 30, bytes.len() / 2, bytes.len() - 40, bytes.len() - 1] {
        let mut b = bytes.clone();
        b[at] ^= 0x10;
        cases.push((format!("bit flip at {at}"), b));
    }
    cases.push(("trailing byte".into(), [bytes.as_slice(), &[0]].concat()));
    for (what, b) in &cases {
        std::fs::write(&bad, b).map_err(err)?;
        ensure(load_checkpoint(&bad).is_err(), format!("{what} accepted"))?;
    }
    Ok(format!("{} logits bitwise equal, {} corruptions rejected", a.len(), cases.len()))
}

fn mnmt(args: &[&str]) -> Result<String, String> {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_mnmt"))
        .arg("--quiet")
        .args(args)
        .output()
        .map_err(err)?;
    if !out.status.success() {
        return Err(format!("mnmt {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn files_under(root: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn write_pair(dir: &std::path::Path, name: &str, c: &ParallelCorpus) -> Result<(), String> {
    mnmt::corpus::write_parallel(
        c,
        dir.join(format!("{name}-{}.{}", c.target_lang, c.source_lang)),
        dir.join(format!("{name}-{}.{}", c.target_lang, c.target_lang)),
    )
    .map_err(err)
}

fn c12_pipeline_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let d = dir.path();
    let mut r = rng(1200);
    let lex: Vec<(String, String)> = (0..16)
        .map(|_| {
            let w = word(&mut r, 2, 5);
            let t = w.bytes().map(|b| char::from_u32(0x0915 + u32::from(b - b'a')).unwrap()).collect();
            (w, t)
        })
        .collect();
    let make = |lang: LangCode, n: usize, noise: bool, r: &mut rand_chacha::ChaCha8Rng| {
        let mut pairs: Vec<(String, String)> = (0..n)
            .map(|_| {
                let idx: Vec<usize> = (0..r.random_range(2..=5)).map(|_| r.random_range(0..lex.len())).collect();
                let s: Vec<&str> = idx.iter().map(|&i| lex[i].0.as_str()).collect();
                let t: Vec<&str> = idx.iter().rev().map(|&i| lex[i].1.as_str()).collect();
                (s.join(" "), t.join(" "))
            })
            .collect();
        if noise {
            for i in (0..n).step_by(10) {
                pairs[i].1 = pairs[i].0.clone();
            }
        }
        let c = corpus(En, Hi, pairs);
        if lang == Hi {
            Ok(c)
        } else {
            let bn: Result<Vec<(String, String)>, String> = c
                .pairs
                .iter()
                .map(|p| Ok((p.source.clone(), transliterate(&p.target, Hi, lang).map_err(err)?.best().to_string())))
                .collect();
            Ok::<_, String>(corpus(En, lang, bn?))
        }
    };
    for (lang, n) in [(Hi, 240), (Bn, 60)] {
        write_pair(d, "train", &make(lang, n, true, &mut r)?)?;
        write_pair(d, "valid", &make(lang, 20, false, &mut r)?)?;
        write_pair(d, "test", &make(lang, 20, false, &mut r)?)?;
    }
    let pair = |t: &str| {
        format!(
            "[[pairs]]\nsource_lang = \"en\"\ntarget_lang = \"{t}\"\ntrain_src = \"train-{t}.en\"\ntrain_tgt = \"train-{t}.{t}\"\n\
             valid_src = \"valid-{t}.en\"\nvalid_tgt = \"valid-{t}.{t}\"\ntest_src = \"test-{t}.en\"\ntest_tgt = \"test-{t}.{t}\"\n"
        )
    };
    let manifest = format!(
        "seed = 12\noutput_dir = \"run\"\n\n{}\n{}\n[[augment]]\ntarget = \"bn\"\nfrom = \"hi\"\n\n\
         [tokenizer]\nnum_merges = 150\n\n[model]\nnum_layers = 1\nnum_heads = 2\nd_model = 32\nd_ffn = 64\n\n\
         [hyper]\nwarmup_updates = 60\npeak_lr = 0.003\nupdate_frequency = 1\n\n[schedule]\nmax_epochs = 30\nbatch_size = 16\n\n\
         [decode]\nbeam_size = 2\n",
        pair("hi"),
        pair("bn")
    );
    std::fs::write(d.join("manifest.toml"), manifest).map_err(err)?;
    let resolved = mnmt(&["resolve", "--manifest", d.join("manifest.toml").to_str().unwrap()])?;
    let resolved_path = d.join("resolved.toml");
    std::fs::write(&resolved_path, &resolved).map_err(err)?;
    let again = mnmt(&["resolve", "--manifest", resolved_path.to_str().unwrap()])?;
    ensure(again == resolved, "re-resolving the resolved manifest changed it")?;

    let run = d.join("run");
    let mut outputs = Vec::new();
    for i in 0..2 {
        let scores = mnmt(&["train", "--manifest", resolved_path.to_str().unwrap()])?;
        let hyp = d.join(format!("cli{i}.hi"));
        mnmt(&[
            "translate",
            "--ckpt",
            run.join("best.ckpt").to_str().unwrap(),
            "--in",
            d.join("test-hi.en").to_str().unwrap(),
            "--out",
            hyp.to_str().unwrap(),
            "--to",
            "hi",
            "--beam",
            "2",
        ])?;
        let bleu = mnmt(&[
            "score",
            "--hyp",
            hyp.to_str().unwrap(),
            "--ref",
            d.join("test-hi.hi").to_str().unwrap(),
        ])?;
        let kept = d.join(format!("run{i}"));
        std::fs::rename(&run, &kept).map_err(err)?;
        outputs.push((kept, scores, std::fs::read(&hyp).map_err(err)?, bleu));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    let files = files_under(&a.0);
    ensure(files == files_under(&b.0), "runs wrote different files")?;
    for f in &files {
        let same = std::fs::read(a.0.join(f)).map_err(err)? == std::fs::read(b.0.join(f)).map_err(err)?;
        ensure(same, format!("{} differs between runs", f.display()))?;
    }
    ensure(a.1 == b.1 && a.2 == b.2 && a.3 == b.3, "printed scores or translations differ")?;
    let metrics = std::fs::read_to_string(a.0.join("metrics.jsonl")).map_err(err)?;
    ensure(metrics.lines().count() >= 2, "empty metric log")?;
    let bleu: f64 = a.3.trim().trim_start_matches("BLEU = ").parse().map_err(err)?;
    ensure(bleu > 0.0, format!("degenerate run: {}", a.3.trim()))?;
    Ok(format!(
        "{} files identical; {}; translate+score {}",
        files.len(),
        a.1.trim().replace('\n', ", "),
        a.3.trim()
    ))
}

fn env_usize(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

const CRITERIA: &[(u32, &str, fn() -> Outcome)] = &[
    (1, "BLEU oracle equivalence", c01_bleu_oracle),
    (2, "BPE oracle equivalence", c02_bpe_oracle),
    (3, "gradient fidelity", c03_gradient_fidelity),
    (4, "causality and normalization", c04_causality_normalization),
    (5, "multiway direction control", c05_direction_control),
    (6, "single-pair degeneracy", c06_single_pair_degeneracy),
    (7, "domain adaptation", c07_domain_adaptation),
    (8, "iterative back-translation", c08_backtranslation),
    (9, "transliteration round trip", c09_transliteration),
    (10, "corpus filtering", c10_filtering),
    (11, "checkpoint round trip", c11_checkpoint_round_trip),
    (12, "full-pipeline reproducibility", c12_pipeline_reproducibility),
];

fn main() -> ExitCode {
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for &(n, name, f) in CRITERIA {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match res {
            Ok(d) => println!("PASS criterion {n:>2} {name} [{secs:.1}s]: {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {n:>2} {name} [{secs:.1}s]: {d}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
