use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Provenance};
use super::data::{check_datasets, BatchStream, PairDataset};
use super::sampler::{PairSampler, Sampling};
use super::{PipelineError, Result};
use crate::model::{adam_step, clip_grad_norm, lr_at, AdamState, Mat, Mode, TrainHyper, TransformerModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Sentences per micro-batch.
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping.
    pub patience: usize,
    /// Smallest validation-loss decrease that counts as improvement.
    pub min_delta: f64,
    /// Hard cap on optimizer steps.
    pub max_updates: Option<u64>,
    /// Overrides `Σ|D| / (batch_size · update_frequency)`.
    pub updates_per_epoch: Option<usize>,
    pub sampling: Sampling,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 12,
            patience: 3,
            min_delta: 0.0,
            max_updates: None,
            updates_per_epoch: None,
            sampling: Sampling::Uniform,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.min_delta >= 0.0) {
            return bad("min_delta must be non-negative");
        }
        if self.updates_per_epoch == Some(0) {
            return bad("updates_per_epoch must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    pub epoch: usize,
    /// Infinite until the first validation; stored as `null`.
    #[serde(with = "infinite_as_null")]
    pub best_valid_loss: f64,
    pub epochs_since_best: usize,
    pub rng_seed: u64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_some(x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl TrainState {
    pub fn new(rng_seed: u64) -> Self {
        TrainState {
            step: 0,
            epoch: 0,
            best_valid_loss: f64::INFINITY,
            epochs_since_best: 0,
            rng_seed,
        }
    }

    /// Records one validation loss; returns whether it is a new best.
    pub fn observe(&mut self, valid_loss: f64, min_delta: f64) -> bool {
        if valid_loss < self.best_valid_loss - min_delta || self.best_valid_loss.is_infinite() {
            self.best_valid_loss = valid_loss;
            self.epochs_since_best = 0;
            true
        } else {
            self.epochs_since_best += 1;
            false
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

pub fn early_stop(state: &TrainState, patience: usize) -> StopDecision {
    if state.epochs_since_best >= patience {
        StopDecision::Stop
    } else {
        StopDecision::Continue
    }
}

/// One line of the metrics log: per epoch and language pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub epoch: usize,
    pub step: u64,
    pub pair_id: usize,
    pub train_loss: Option<f64>,
    pub valid_loss: Option<f64>,
    pub lr: f64,
}

impl MetricRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metric records serialize")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub last: Checkpoint,
    pub best: Checkpoint,
    pub records: Vec<MetricRecord>,
    /// Token-weighted training loss of every optimizer step.
    pub update_losses: Vec<f64>,
    pub best_epoch: usize,
}

/// Mean label-smoothed loss over a dataset in eval mode, with token count.
pub fn evaluate_loss(
    model: &TransformerModel,
    dataset: &PairDataset,
    eps: f64,
    batch_size: usize,
) -> Result<(f64, usize)> {
    let mut sum = 0.0;
    let mut tokens = 0;
    for b in dataset.batches(batch_size)? {
        let (l, n) = model.loss(&b, eps, Mode::Eval)?;
        sum += l * n as f64;
        tokens += n;
    }
    Ok((if tokens == 0 { 0.0 } else { sum / tokens as f64 }, tokens))
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const DROPOUT_STREAM: u64 = 0;
const SAMPLER_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

fn updates_per_epoch(total: usize, cfg: &TrainConfig, hyper: &TrainHyper) -> usize {
    cfg.updates_per_epoch
        .unwrap_or_else(|| total.div_ceil(cfg.batch_size * hyper.update_frequency).max(1))
}

fn check_vocab(model: &TransformerModel, datasets: &[&PairDataset]) -> Result<()> {
    let c = model.config();
    for d in datasets {
        if d.vocab_size != c.vocab_size_src || d.vocab_size != c.vocab_size_tgt {
            return Err(PipelineError::CheckpointIncompatible(format!(
                "pair {} uses a vocabulary of {} but the model expects {}/{}",
                d.pair_id, d.vocab_size, c.vocab_size_src, c.vocab_size_tgt
            )));
        }
    }
    Ok(())
}

fn provenance(model: &TransformerModel, datasets: &[PairDataset]) -> Provenance {
    Provenance::new(model.config(), datasets.iter().map(PairDataset::fingerprint).collect())
}

/// Adds `n`-weighted `g` into `acc`.
fn accumulate(acc: &mut [Mat], grads: &[Mat], n: f64) {
    for (a, g) in acc.iter_mut().zip(grads) {
        a.scaled_add(n, g);
    }
}

struct Loop<'a> {
    model: TransformerModel,
    opt: AdamState,
    state: TrainState,
    hyper: &'a TrainHyper,
    cfg: &'a TrainConfig,
    prov: Provenance,
}

impl Loop<'_> {
    fn snapshot(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.opt.clone()),
            state: self.state.clone(),
            provenance: self.prov.clone(),
        }
    }

    /// Applies gradients accumulated over `tokens` target tokens.
    fn apply(&mut self, mut acc: Vec<Mat>, tokens: usize) {
        let k = 1.0 / tokens.max(1) as f64;
        for a in &mut acc {
            a.mapv_inplace(|x| x * k);
        }
        if let Some(c) = self.hyper.clip_norm {
            clip_grad_norm(&mut acc, c);
        }
        let lr = lr_at(self.state.step + 1, self.hyper);
        adam_step(self.model.params_mut(), &acc, &mut self.opt, self.hyper, lr);
        self.state.step += 1;
    }

    fn budget_spent(&self) -> bool {
        self.cfg.max_updates.is_some_and(|k| self.state.step >= k)
    }

    fn run(
        mut self,
        datasets: &[PairDataset],
        valid: &[PairDataset],
        sink: &mut dyn FnMut(&MetricRecord),
    ) -> Result<TrainOutcome> {
        let cfg = self.cfg;
        let hyper = self.hyper;
        let mut dropout = rng_stream(cfg.seed, DROPOUT_STREAM);
        let mut sampler = PairSampler::new(datasets, cfg.sampling, rng_stream(cfg.seed, SAMPLER_STREAM))?;
        let mut streams: Vec<BatchStream> = datasets
            .iter()
            .enumerate()
            .map(|(m, d)| BatchStream::new(d.len(), cfg.batch_size, rng_stream(cfg.seed, SHUFFLE_STREAM + m as u64)))
            .collect();
        let total: usize = datasets.iter().map(PairDataset::len).sum();
        let upe = updates_per_epoch(total, cfg, hyper);
        let shapes = self.model.param_shapes();

        let mut best = self.snapshot();
        let mut best_epoch = self.state.epoch;
        let mut records = Vec::new();
        let mut update_losses = Vec::new();
        for _ in 0..cfg.max_epochs {
            if self.budget_spent() {
                break;
            }
            let mut pair_loss = vec![0.0; datasets.len()];
            let mut pair_tokens = vec![0usize; datasets.len()];
            for _ in 0..upe {
                if self.budget_spent() {
                    break;
                }
                let mut acc: Vec<Mat> = shapes.iter().map(|&s| Mat::zeros(s)).collect();
                let mut tokens = 0;
                let mut loss_sum = 0.0;
                for _ in 0..hyper.update_frequency {
                    let m = sampler.sample();
                    let batch = datasets[m].batch(&streams[m].next_indices())?;
                    let (loss, n, g) =
                        self.model
                            .loss_and_grads(&batch, hyper.label_smoothing, Mode::Train(&mut dropout))?;
                    accumulate(&mut acc, &g, n as f64);
                    tokens += n;
                    loss_sum += loss * n as f64;
                    pair_loss[m] += loss * n as f64;
                    pair_tokens[m] += n;
                }
                self.apply(acc, tokens);
                update_losses.push(loss_sum / tokens.max(1) as f64);
            }
            self.state.epoch += 1;

            let lr = lr_at(self.state.step.max(1), hyper);
            let mut vsum = 0.0;
            let mut vtok = 0;
            for (m, d) in datasets.iter().enumerate() {
                let v = match valid.iter().find(|v| v.pair_id == d.pair_id) {
                    Some(v) if !v.is_empty() => {
                        let (l, n) = evaluate_loss(&self.model, v, hyper.label_smoothing, cfg.batch_size)?;
                        vsum += l * n as f64;
                        vtok += n;
                        Some(l)
                    }
                    _ => None,
                };
                let rec = MetricRecord {
                    epoch: self.state.epoch,
                    step: self.state.step,
                    pair_id: d.pair_id,
                    train_loss: (pair_tokens[m] > 0).then(|| pair_loss[m] / pair_tokens[m] as f64),
                    valid_loss: v,
                    lr,
                };
                sink(&rec);
                records.push(rec);
            }
            let tracked = if vtok > 0 {
                vsum / vtok as f64
            } else {
                pair_loss.iter().sum::<f64>() / pair_tokens.iter().sum::<usize>().max(1) as f64
            };
            if self.state.observe(tracked, cfg.min_delta) {
                best = self.snapshot();
                best_epoch = self.state.epoch;
            }
            if early_stop(&self.state, cfg.patience) == StopDecision::Stop {
                break;
            }
        }
        Ok(TrainOutcome {
            last: self.snapshot(),
            best,
            records,
            update_losses,
            best_epoch,
        })
    }
}

/// Trains one model on all language pairs at once. Every optimizer step
/// accumulates `update_frequency` micro-batches, each drawn from a pair
/// chosen by the sampler. Validation loss is tracked per epoch and the best
/// epoch's snapshot is kept.
pub fn train_multiway(
    model: TransformerModel,
    datasets: &[PairDataset],
    valid: &[PairDataset],
    hyper: &TrainHyper,
    cfg: &TrainConfig,
    sink: &mut dyn FnMut(&MetricRecord),
) -> Result<TrainOutcome> {
    check_datasets(datasets, "training set")?;
    hyper.validate()?;
    cfg.validate()?;
    check_vocab(&model, &datasets.iter().chain(valid).collect::<Vec<_>>())?;
    let opt = AdamState::new(model.param_shapes());
    let prov = provenance(&model, datasets);
    Loop {
        model,
        opt,
        state: TrainState::new(cfg.seed),
        hyper,
        cfg,
        prov,
    }
    .run(datasets, valid, sink)
}

/// Bilingual training on one dataset: shuffled batches, gradient
/// accumulation, one Adam step per `update_frequency` micro-batches.
pub fn train_plain(
    mut model: TransformerModel,
    dataset: &PairDataset,
    valid: Option<&PairDataset>,
    hyper: &TrainHyper,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    check_datasets(std::slice::from_ref(dataset), "training set")?;
    hyper.validate()?;
    cfg.validate()?;
    let mut dropout = rng_stream(cfg.seed, DROPOUT_STREAM);
    let mut stream = BatchStream::new(dataset.len(), cfg.batch_size, rng_stream(cfg.seed, SHUFFLE_STREAM));
    let mut opt = AdamState::new(model.param_shapes());
    let mut state = TrainState::new(cfg.seed);
    let prov = provenance(&model, std::slice::from_ref(dataset));
    let upe = updates_per_epoch(dataset.len(), cfg, hyper);
    let snapshot = |model: &TransformerModel, opt: &AdamState, state: &TrainState| Checkpoint {
        model: model.clone(),
        optimizer: Some(opt.clone()),
        state: state.clone(),
        provenance: prov.clone(),
    };
    let mut best = snapshot(&model, &opt, &state);
    let mut best_epoch = 0;
    let mut records = Vec::new();
    let mut update_losses = Vec::new();
    let budget = |step: u64| cfg.max_updates.is_some_and(|k| step >= k);

    for _ in 0..cfg.max_epochs {
        if budget(state.step) {
            break;
        }
        let (mut epoch_loss, mut epoch_tokens) = (0.0, 0usize);
        for _ in 0..upe {
            if budget(state.step) {
                break;
            }
            let mut grads: Option<Vec<Mat>> = None;
            let (mut loss_sum, mut tokens) = (0.0, 0usize);
            for _ in 0..hyper.update_frequency {
                let batch = dataset.batch(&stream.next_indices())?;
                let (l, n, g) = model.loss_and_grads(&batch, hyper.label_smoothing, Mode::Train(&mut dropout))?;
                let acc = grads.get_or_insert_with(|| g.iter().map(|x| Mat::zeros(x.raw_dim())).collect());
                for (a, gi) in acc.iter_mut().zip(&g) {
                    a.scaled_add(n as f64, gi);
                }
                loss_sum += l * n as f64;
                tokens += n;
                epoch_loss += l * n as f64;
                epoch_tokens += n;
            }
            let mut grads = grads.unwrap();
            for g in &mut grads {
                g.mapv_inplace(|x| x * (1.0 / tokens.max(1) as f64));
            }
            if let Some(c) = hyper.clip_norm {
                clip_grad_norm(&mut grads, c);
            }
            adam_step(model.params_mut(), &grads, &mut opt, hyper, lr_at(state.step + 1, hyper));
            state.step += 1;
            update_losses.push(loss_sum / tokens.max(1) as f64);
        }
        state.epoch += 1;
        let train_loss = epoch_loss / epoch_tokens.max(1) as f64;
        let valid_loss = match valid {
            Some(v) if !v.is_empty() => Some(evaluate_loss(&model, v, hyper.label_smoothing, cfg.batch_size)?.0),
            _ => None,
        };
        records.push(MetricRecord {
            epoch: state.epoch,
            step: state.step,
            pair_id: dataset.pair_id,
            train_loss: (epoch_tokens > 0).then_some(train_loss),
            valid_loss,
            lr: lr_at(state.step.max(1), hyper),
        });
        if state.observe(valid_loss.unwrap_or(train_loss), cfg.min_delta) {
            best = snapshot(&model, &opt, &state);
            best_epoch = state.epoch;
        }
        if early_stop(&state, cfg.patience) == StopDecision::Stop {
            break;
        }
    }
    Ok(TrainOutcome {
        last: snapshot(&model, &opt, &state),
        best,
        records,
        update_losses,
        best_epoch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AdaptOptions {
    /// Continue from the saved Adam moments and step counter instead of
    /// starting a fresh optimizer.
    pub restore_optimizer: bool,
}

/// Continues training a checkpoint on in-domain data for `cfg.max_epochs`
/// epochs with fresh validation tracking and returns the best in-domain
/// snapshot. Zero epochs return the base model unchanged.
pub fn domain_adapt(
    base: &Checkpoint,
    in_domain: &[PairDataset],
    valid: &[PairDataset],
    hyper: &TrainHyper,
    cfg: &TrainConfig,
    opts: AdaptOptions,
    sink: &mut dyn FnMut(&MetricRecord),
) -> Result<TrainOutcome> {
    check_datasets(in_domain, "in-domain set")?;
    hyper.validate()?;
    cfg.validate()?;
    check_vocab(&base.model, &in_domain.iter().chain(valid).collect::<Vec<_>>())?;
    let model = base.model.clone();
    let (opt, step) = match (&base.optimizer, opts.restore_optimizer) {
        (Some(o), true) => (o.clone(), base.state.step),
        _ => (AdamState::new(model.param_shapes()), 0),
    };
    let mut state = TrainState::new(cfg.seed);
    state.step = step;
    let prov = provenance(&model, in_domain);
    Loop {
        model,
        opt,
        state,
        hyper,
        cfg,
        prov,
    }
    .run(in_domain, valid, sink)
}
