//! Pre-norm transformer encoder-decoder.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::attention::AttnShape;
use super::config::TransformerConfig;
use super::tape::{Mat, Tape, Var};
use super::ModelError;
use crate::tokenizer::{BOS, EOS, PAD};

/// Padded source/target id sequences. Every target starts with BOS and ends
/// with EOS; the decoder reads `tgt[..n-1]` and predicts `tgt[1..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub src: Vec<Vec<u32>>,
    pub tgt: Vec<Vec<u32>>,
}

impl Batch {
    pub fn new(src: Vec<Vec<u32>>, tgt: Vec<Vec<u32>>) -> Result<Self, ModelError> {
        if src.len() != tgt.len() || src.is_empty() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} sources vs {} targets",
                src.len(),
                tgt.len()
            )));
        }
        if src.iter().any(Vec::is_empty) {
            return Err(ModelError::ShapeMismatch("empty source row".into()));
        }
        for t in &tgt {
            if t.len() < 2 || t[0] != BOS || *t.last().unwrap() != EOS {
                return Err(ModelError::ShapeMismatch(
                    "target rows must start with BOS and end with EOS".into(),
                ));
            }
        }
        Ok(Batch { src, tgt })
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn src_width(&self) -> usize {
        self.src.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Number of decoder positions per row.
    pub fn tgt_width(&self) -> usize {
        self.tgt.iter().map(|t| t.len() - 1).max().unwrap_or(0)
    }

    /// Flattened next-token labels, PAD beyond each row's length.
    pub fn labels(&self) -> Vec<u32> {
        let w = self.tgt_width();
        let mut out = vec![PAD; self.len() * w];
        for (b, t) in self.tgt.iter().enumerate() {
            out[b * w..b * w + t.len() - 1].copy_from_slice(&t[1..]);
        }
        out
    }
}

pub enum Mode<'a> {
    Train(&'a mut ChaCha8Rng),
    Eval,
}

#[derive(Debug, Clone, Copy)]
struct Ln {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct Attn {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Copy)]
struct Ffn {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone)]
struct EncLayer {
    ln1: Ln,
    attn: Attn,
    ln2: Ln,
    ffn: Ffn,
}

#[derive(Debug, Clone)]
struct DecLayer {
    ln1: Ln,
    self_attn: Attn,
    ln2: Ln,
    cross: Attn,
    ln3: Ln,
    ffn: Ffn,
}

#[derive(Debug, Clone)]
struct Layout {
    src_emb: usize,
    tgt_emb: usize,
    out_proj: usize,
    enc: Vec<EncLayer>,
    enc_ln: Ln,
    dec: Vec<DecLayer>,
    dec_ln: Ln,
}

enum Init {
    Glorot,
    Normal(f64),
    Zeros,
    Ones,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn ln(&mut self, prefix: &str, d: usize) -> Ln {
        Ln {
            g: self.add(format!("{prefix}.g"), (1, d), Init::Ones),
            b: self.add(format!("{prefix}.b"), (1, d), Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> Attn {
        let mut w = |n: &str| self.add(format!("{prefix}.{n}"), (d, d), Init::Glorot);
        let (wq, wk, wv, wo) = (w("wq"), w("wk"), w("wv"), w("wo"));
        let mut b = |n: &str| self.add(format!("{prefix}.{n}"), (1, d), Init::Zeros);
        let (bq, bk, bv, bo) = (b("bq"), b("bk"), b("bv"), b("bo"));
        Attn {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> Ffn {
        Ffn {
            w1: self.add(format!("{prefix}.w1"), (d, f), Init::Glorot),
            b1: self.add(format!("{prefix}.b1"), (1, f), Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), (f, d), Init::Glorot),
            b2: self.add(format!("{prefix}.b2"), (1, d), Init::Zeros),
        }
    }
}

fn build_layout(cfg: &TransformerConfig) -> (Layout, Builder) {
    let d = cfg.d_model;
    let emb_init = || Init::Normal((d as f64).powf(-0.5));
    let mut b = Builder {
        names: vec![],
        shapes: vec![],
        inits: vec![],
    };
    let (src_emb, tgt_emb, out_proj) = if cfg.shared_embeddings {
        let e = b.add("emb".into(), (cfg.vocab_size_src, d), emb_init());
        (e, e, e)
    } else {
        (
            b.add("enc.emb".into(), (cfg.vocab_size_src, d), emb_init()),
            b.add("dec.emb".into(), (cfg.vocab_size_tgt, d), emb_init()),
            b.add("out.proj".into(), (cfg.vocab_size_tgt, d), emb_init()),
        )
    };
    let enc = (0..cfg.num_layers)
        .map(|l| EncLayer {
            ln1: b.ln(&format!("enc.{l}.ln1"), d),
            attn: b.attn(&format!("enc.{l}.attn"), d),
            ln2: b.ln(&format!("enc.{l}.ln2"), d),
            ffn: b.ffn(&format!("enc.{l}.ffn"), d, cfg.d_ffn),
        })
        .collect();
    let enc_ln = b.ln("enc.ln_f", d);
    let dec = (0..cfg.num_layers)
        .map(|l| DecLayer {
            ln1: b.ln(&format!("dec.{l}.ln1"), d),
            self_attn: b.attn(&format!("dec.{l}.self_attn"), d),
            ln2: b.ln(&format!("dec.{l}.ln2"), d),
            cross: b.attn(&format!("dec.{l}.cross_attn"), d),
            ln3: b.ln(&format!("dec.{l}.ln3"), d),
            ffn: b.ffn(&format!("dec.{l}.ffn"), d, cfg.d_ffn),
        })
        .collect();
    let dec_ln = b.ln("dec.ln_f", d);
    (
        Layout {
            src_emb,
            tgt_emb,
            out_proj,
            enc,
            enc_ln,
            dec,
            dec_ln,
        },
        b,
    )
}

/// Fixed sinusoidal position table: sin on even columns, cos on odd ones.
pub fn sinusoidal_positions(len: usize, d: usize) -> Mat {
    Mat::from_shape_fn((len, d), |(pos, i)| {
        let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Encoder states for a batch of sources, kept for step-wise decoding.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub states: Mat,
    pub lens: Vec<usize>,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub struct TransformerModel {
    config: TransformerConfig,
    names: Vec<String>,
    params: Vec<Mat>,
    layout: Layout,
    positions: Mat,
}

impl PartialEq for TransformerModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.names == other.names && self.params == other.params
    }
}

impl TransformerModel {
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let (layout, b) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = b
            .shapes
            .iter()
            .zip(&b.inits)
            .map(|(&(r, c), init)| match init {
                Init::Zeros => Mat::zeros((r, c)),
                Init::Ones => Mat::ones((r, c)),
                Init::Glorot => {
                    let a = (6.0 / (r + c) as f64).sqrt();
                    Mat::from_shape_fn((r, c), |_| rng.random_range(-a..a))
                }
                Init::Normal(std) => {
                    let n = Normal::new(0.0, *std).unwrap();
                    Mat::from_shape_fn((r, c), |_| n.sample(&mut rng))
                }
            })
            .collect();
        let positions = sinusoidal_positions(config.max_positions, config.d_model);
        Ok(TransformerModel {
            config,
            names: b.names,
            params,
            layout,
            positions,
        })
    }

    /// Rebuilds a model from named arrays, checking names and shapes.
    pub fn from_params(config: TransformerConfig, named: Vec<(String, Mat)>) -> Result<Self, ModelError> {
        let mut m = TransformerModel::new(config, 0)?;
        if named.len() != m.names.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "expected {} parameters, found {}",
                m.names.len(),
                named.len()
            )));
        }
        for (i, (name, value)) in named.into_iter().enumerate() {
            if name != m.names[i] || value.dim() != m.params[i].dim() {
                return Err(ModelError::ShapeMismatch(format!(
                    "parameter {i}: expected {} {:?}, found {name} {:?}",
                    m.names[i],
                    m.params[i].dim(),
                    value.dim()
                )));
            }
            if value.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::NonFinite(name));
            }
            m.params[i] = value;
        }
        Ok(m)
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Mat] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Mat] {
        &mut self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Mat::len).sum()
    }

    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.params.iter().map(Mat::dim).collect()
    }

    fn check_ids(&self, rows: &[Vec<u32>], vocab: usize, side: &str) -> Result<(), ModelError> {
        for r in rows {
            if r.len() > self.config.max_positions {
                return Err(ModelError::ShapeMismatch(format!(
                    "{side} length {} exceeds max_positions {}",
                    r.len(),
                    self.config.max_positions
                )));
            }
            if let Some(&bad) = r.iter().find(|&&id| id as usize >= vocab) {
                return Err(ModelError::ShapeMismatch(format!(
                    "{side} id {bad} outside vocabulary of {vocab}"
                )));
            }
        }
        Ok(())
    }

    fn dropout(&self, tape: &mut Tape, x: Var, mode: &mut Mode) -> Var {
        let p = self.config.dropout;
        match mode {
            Mode::Train(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let dim = tape.value(x).raw_dim();
                let mask = Mat::from_shape_fn(dim, |_| if rng.random::<f64>() < p { 0.0 } else { keep });
                tape.scale_by(x, mask)
            }
            _ => x,
        }
    }

    /// Token embeddings scaled by √d plus position encodings, rows padded
    /// to `width` per sequence.
    fn embed(&self, tape: &mut Tape, pv: &[Var], table: usize, rows: &[Vec<u32>], width: usize) -> Var {
        let mut ids = Vec::with_capacity(rows.len() * width);
        for r in rows {
            ids.extend(r.iter().copied().chain(std::iter::repeat(PAD)).take(width));
        }
        let scale = (self.config.d_model as f64).sqrt();
        let e = tape.gather(pv[table], &ids, scale);
        let mut pe = Mat::zeros((rows.len() * width, self.config.d_model));
        for b in 0..rows.len() {
            pe.slice_mut(s![b * width..(b + 1) * width, ..])
                .assign(&self.positions.slice(s![..width, ..]));
        }
        let pe = tape.constant(pe);
        tape.add(e, pe)
    }

    fn mha(&self, tape: &mut Tape, pv: &[Var], p: &Attn, xq: Var, xkv: Var, shape: AttnShape) -> Var {
        let q = tape.linear(xq, pv[p.wq], pv[p.bq]);
        let k = tape.linear(xkv, pv[p.wk], pv[p.bk]);
        let v = tape.linear(xkv, pv[p.wv], pv[p.bv]);
        let a = tape.attention(q, k, v, shape);
        tape.linear(a, pv[p.wo], pv[p.bo])
    }

    fn ffn(&self, tape: &mut Tape, pv: &[Var], p: &Ffn, x: Var) -> Var {
        let h = tape.linear(x, pv[p.w1], pv[p.b1]);
        let h = tape.relu(h);
        tape.linear(h, pv[p.w2], pv[p.b2])
    }

    fn ln(&self, tape: &mut Tape, pv: &[Var], p: &Ln, x: Var) -> Var {
        tape.layer_norm(x, pv[p.g], pv[p.b])
    }

    fn encoder(&self, tape: &mut Tape, pv: &[Var], src: &[Vec<u32>], width: usize, mode: &mut Mode) -> Var {
        let lens: Vec<usize> = src.iter().map(Vec::len).collect();
        let mut x = self.embed(tape, pv, self.layout.src_emb, src, width);
        x = self.dropout(tape, x, mode);
        for layer in &self.layout.enc {
            let h = self.ln(tape, pv, &layer.ln1, x);
            let shape = AttnShape {
                batch: src.len(),
                tq: width,
                tk: width,
                heads: self.config.num_heads,
                key_lens: lens.clone(),
                causal: false,
            };
            let a = self.mha(tape, pv, &layer.attn, h, h, shape);
            let a = self.dropout(tape, a, mode);
            x = tape.add(x, a);
            let h = self.ln(tape, pv, &layer.ln2, x);
            let f = self.ffn(tape, pv, &layer.ffn, h);
            let f = self.dropout(tape, f, mode);
            x = tape.add(x, f);
        }
        self.ln(tape, pv, &self.layout.enc_ln, x)
    }

    #[allow(clippy::too_many_arguments)]
    fn decoder(
        &self,
        tape: &mut Tape,
        pv: &[Var],
        memory: Var,
        src_lens: &[usize],
        src_width: usize,
        tgt_in: &[Vec<u32>],
        width: usize,
        mode: &mut Mode,
    ) -> Var {
        let batch = tgt_in.len();
        let tgt_lens: Vec<usize> = tgt_in.iter().map(Vec::len).collect();
        let mut y = self.embed(tape, pv, self.layout.tgt_emb, tgt_in, width);
        y = self.dropout(tape, y, mode);
        for layer in &self.layout.dec {
            let h = self.ln(tape, pv, &layer.ln1, y);
            let shape = AttnShape {
                batch,
                tq: width,
                tk: width,
                heads: self.config.num_heads,
                key_lens: tgt_lens.clone(),
                causal: true,
            };
            let a = self.mha(tape, pv, &layer.self_attn, h, h, shape);
            let a = self.dropout(tape, a, mode);
            y = tape.add(y, a);
            let h = self.ln(tape, pv, &layer.ln2, y);
            let shape = AttnShape {
                batch,
                tq: width,
                tk: src_width,
                heads: self.config.num_heads,
                key_lens: src_lens.to_vec(),
                causal: false,
            };
            let c = self.mha(tape, pv, &layer.cross, h, memory, shape);
            let c = self.dropout(tape, c, mode);
            y = tape.add(y, c);
            let h = self.ln(tape, pv, &layer.ln3, y);
            let f = self.ffn(tape, pv, &layer.ffn, h);
            let f = self.dropout(tape, f, mode);
            y = tape.add(y, f);
        }
        let y = self.ln(tape, pv, &self.layout.dec_ln, y);
        let logits = tape.matmul_bt(y, pv[self.layout.out_proj]);
        tape.log_softmax(logits)
    }

    fn param_vars(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(i, p))
            .collect()
    }

    /// Records the full forward pass; returns the log-probability node.
    fn build(&self, tape: &mut Tape, batch: &Batch, mode: &mut Mode) -> Result<Var, ModelError> {
        self.check_ids(&batch.src, self.config.vocab_size_src, "source")?;
        self.check_ids(&batch.tgt, self.config.vocab_size_tgt, "target")?;
        let pv = self.param_vars(tape);
        let sw = batch.src_width();
        let memory = self.encoder(tape, &pv, &batch.src, sw, mode);
        let src_lens: Vec<usize> = batch.src.iter().map(Vec::len).collect();
        let tgt_in: Vec<Vec<u32>> = batch.tgt.iter().map(|t| t[..t.len() - 1].to_vec()).collect();
        Ok(self.decoder(tape, &pv, memory, &src_lens, sw, &tgt_in, batch.tgt_width(), mode))
    }

    /// Per-position log-probabilities, `batch * tgt_width` rows; row
    /// `b * tgt_width + t` predicts `tgt[b][t + 1]`.
    pub fn forward(&self, batch: &Batch, mut mode: Mode) -> Result<Mat, ModelError> {
        let mut tape = Tape::new();
        let out = self.build(&mut tape, batch, &mut mode)?;
        Ok(tape.value(out).clone())
    }

    /// Mean label-smoothed loss and the number of target tokens.
    pub fn loss(&self, batch: &Batch, eps: f64, mut mode: Mode) -> Result<(f64, usize), ModelError> {
        let mut tape = Tape::new();
        let lp = self.build(&mut tape, batch, &mut mode)?;
        let loss = tape.smoothed_nll(lp, &batch.labels(), eps, PAD);
        Ok((tape.scalar(loss), tape.tokens(loss)))
    }

    /// Loss, token count and exact gradients for every parameter.
    pub fn loss_and_grads(
        &self,
        batch: &Batch,
        eps: f64,
        mut mode: Mode,
    ) -> Result<(f64, usize, Vec<Mat>), ModelError> {
        let mut tape = Tape::new();
        let lp = self.build(&mut tape, batch, &mut mode)?;
        let loss = tape.smoothed_nll(lp, &batch.labels(), eps, PAD);
        let grads = tape.backward(loss, self.params.len());
        let grads: Vec<Mat> = grads
            .into_iter()
            .zip(&self.params)
            .map(|(g, p)| g.unwrap_or_else(|| Mat::zeros(p.raw_dim())))
            .collect();
        for (g, name) in grads.iter().zip(&self.names) {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::NonFiniteGradient(name.clone()));
            }
        }
        Ok((tape.scalar(loss), tape.tokens(loss), grads))
    }

    pub fn encode(&self, src: &[Vec<u32>]) -> Result<Encoded, ModelError> {
        if src.is_empty() || src.iter().any(Vec::is_empty) {
            return Err(ModelError::ShapeMismatch("empty source".into()));
        }
        self.check_ids(src, self.config.vocab_size_src, "source")?;
        let mut tape = Tape::new();
        let pv = self.param_vars(&mut tape);
        let width = src.iter().map(Vec::len).max().unwrap();
        let out = self.encoder(&mut tape, &pv, src, width, &mut Mode::Eval);
        Ok(Encoded {
            states: tape.value(out).clone(),
            lens: src.iter().map(Vec::len).collect(),
            width,
        })
    }

    /// Log-probabilities of the next token after each prefix. `source[i]`
    /// selects which encoded sentence prefix `i` belongs to.
    pub fn next_log_probs(
        &self,
        enc: &Encoded,
        source: &[usize],
        prefixes: &[Vec<u32>],
    ) -> Result<Mat, ModelError> {
        self.check_ids(prefixes, self.config.vocab_size_tgt, "target")?;
        let d = self.config.d_model;
        let w = enc.width;
        let mut memory = Mat::zeros((prefixes.len() * w, d));
        for (i, &src) in source.iter().enumerate() {
            memory
                .slice_mut(s![i * w..(i + 1) * w, ..])
                .assign(&enc.states.slice(s![src * w..(src + 1) * w, ..]));
        }
        let lens: Vec<usize> = source.iter().map(|&i| enc.lens[i]).collect();
        let width = prefixes.iter().map(Vec::len).max().unwrap_or(0);
        let mut tape = Tape::new();
        let pv = self.param_vars(&mut tape);
        let memory = tape.constant(memory);
        let lp = self.decoder(&mut tape, &pv, memory, &lens, w, prefixes, width, &mut Mode::Eval);
        let lp = tape.value(lp);
        let mut out = Array2::zeros((prefixes.len(), lp.ncols()));
        for (i, p) in prefixes.iter().enumerate() {
            out.row_mut(i).assign(&lp.row(i * width + p.len() - 1));
        }
        Ok(out)
    }
}
