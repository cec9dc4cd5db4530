//! Reverse-mode automatic differentiation over 2-D matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Nodes are created
//! in topological order, so the backward pass is a single reverse sweep.

use ndarray::{s, Array2, Axis, Zip};

use super::attention::{attention_backward, attention_forward, AttnShape};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const LN_EPS: f64 = 1e-5;

enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    /// a · bᵀ
    MatMulBt(Var, Var),
    Add(Var, Var),
    /// a + row vector broadcast over rows
    AddRow(Var, Var),
    Relu(Var),
    /// Elementwise product with a fixed matrix (dropout masks).
    Scale(Var, Mat),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        rstd: Vec<f64>,
    },
    Gather {
        table: Var,
        ids: Vec<u32>,
        scale: f64,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        shape: AttnShape,
        probs: Vec<Mat>,
    },
    LogSoftmax(Var),
    SmoothedNll {
        logp: Var,
        targets: Vec<u32>,
        eps: f64,
        pad: u32,
        tokens: usize,
    },
}

struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients for parameters, indexed like the parameter store; `None` for
/// parameters that did not take part in the computation.
pub type ParamGrads = Vec<Option<Mat>>;

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, m: Mat) -> Var {
        self.push(m, Op::Constant, false)
    }

    pub fn param(&mut self, index: usize, m: &Mat) -> Var {
        self.push(m.clone(), Op::Param(index), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulBt(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    /// `x · w + b`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn scale_by(&mut self, a: Var, m: Mat) -> Var {
        let v = self.value(a) * &m;
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, m), ng)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let d = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut rstd = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<f64>() / d;
            let r = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|a| (a - mean) * r);
            rstd.push(r);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        )
    }

    /// Rows of `table` selected by `ids`, multiplied by `scale`.
    pub fn gather(&mut self, table: Var, ids: &[u32], scale: f64) -> Var {
        let t = self.value(table);
        let mut out = Mat::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&(&t.row(id as usize) * scale));
        }
        let ng = self.ng(table);
        self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
                scale,
            },
            ng,
        )
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, shape: AttnShape) -> Var {
        let (out, probs) = attention_forward(self.value(q), self.value(k), self.value(v), &shape);
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                shape,
                probs,
            },
            ng,
        )
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|x| x - lse);
        }
        let ng = self.ng(a);
        self.push(out, Op::LogSoftmax(a), ng)
    }

    /// Label-smoothed negative log-likelihood averaged over non-pad rows.
    /// Produces a 1×1 node; [`Tape::tokens`] returns the row count used.
    pub fn smoothed_nll(&mut self, logp: Var, targets: &[u32], eps: f64, pad: u32) -> Var {
        let lp = self.value(logp);
        assert_eq!(lp.nrows(), targets.len(), "one target per row");
        let (total, tokens) = super::loss::smoothed_nll_sum(lp.view(), targets, eps, pad);
        let loss = if tokens == 0 { 0.0 } else { total / tokens as f64 };
        let ng = self.ng(logp);
        self.push(
            Mat::from_elem((1, 1), loss),
            Op::SmoothedNll {
                logp,
                targets: targets.to_vec(),
                eps,
                pad,
                tokens,
            },
            ng,
        )
    }

    pub fn tokens(&self, loss: Var) -> usize {
        match &self.nodes[loss.0].op {
            Op::SmoothedNll { tokens, .. } => *tokens,
            _ => 0,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    /// Back-propagates from a 1×1 node and returns parameter gradients.
    pub fn backward(&self, root: Var, num_params: usize) -> ParamGrads {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Mat>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(Mat::ones(self.value(root).raw_dim()));
        let mut out: ParamGrads = (0..num_params).map(|_| None).collect();

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let mut acc = |v: Var, d: Mat| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(e) => *e += &d,
                    slot => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(p) => {
                    match &mut out[*p] {
                        Some(e) => *e += &g,
                        slot => *slot = Some(g),
                    }
                }
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        acc(*a, g.dot(&self.value(*b).t()));
                    }
                    if self.ng(*b) {
                        acc(*b, self.value(*a).t().dot(&g));
                    }
                }
                Op::MatMulBt(a, b) => {
                    if self.ng(*a) {
                        acc(*a, g.dot(self.value(*b)));
                    }
                    if self.ng(*b) {
                        acc(*b, g.t().dot(self.value(*a)));
                    }
                }
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::AddRow(a, row) => {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(*a, g);
                }
                Op::Relu(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| {
                        if y <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    acc(*a, d);
                }
                Op::Scale(a, m) => acc(*a, g * m),
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    rstd,
                } => {
                    if self.ng(*gamma) {
                        acc(*gamma, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*beta) {
                        acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.ng(*x) {
                        let dxhat = &g * self.value(*gamma);
                        let d = xhat.ncols() as f64;
                        let mut dx = Mat::zeros(g.raw_dim());
                        for r in 0..dx.nrows() {
                            let dh = dxhat.row(r);
                            let xh = xhat.row(r);
                            let sum = dh.sum();
                            let dot = dh.dot(&xh);
                            let k = rstd[r] / d;
                            Zip::from(dx.row_mut(r)).and(&dh).and(&xh).for_each(|o, &a, &b| {
                                *o = k * (d * a - sum - b * dot);
                            });
                        }
                        acc(*x, dx);
                    }
                }
                Op::Gather { table, ids, scale } => {
                    let t = self.value(*table);
                    let mut d = Mat::zeros(t.raw_dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = d.row_mut(id as usize);
                        row.scaled_add(*scale, &g.row(r));
                    }
                    acc(*table, d);
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    shape,
                    probs,
                } => {
                    let (dq, dk, dv) = attention_backward(
                        &g,
                        self.value(*q),
                        self.value(*k),
                        self.value(*v),
                        shape,
                        probs,
                    );
                    acc(*q, dq);
                    acc(*k, dk);
                    acc(*v, dv);
                }
                Op::LogSoftmax(a) => {
                    let mut d = g;
                    for (mut dr, yr) in d.rows_mut().into_iter().zip(node.value.rows()) {
                        let sum = dr.sum();
                        Zip::from(&mut dr).and(&yr).for_each(|o, &y| *o -= y.exp() * sum);
                    }
                    acc(*a, d);
                }
                Op::SmoothedNll {
                    logp,
                    targets,
                    eps,
                    pad,
                    tokens,
                } => {
                    let lp = self.value(*logp);
                    let mut d = Mat::zeros(lp.raw_dim());
                    if *tokens > 0 {
                        let scale = g[[0, 0]] / *tokens as f64;
                        let vocab = lp.ncols() as f64;
                        for (r, &t) in targets.iter().enumerate() {
                            if t == *pad {
                                continue;
                            }
                            let mut row = d.slice_mut(s![r, ..]);
                            row.fill(-scale * eps / vocab);
                            row[t as usize] -= scale * (1.0 - eps);
                        }
                    }
                    acc(*logp, d);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central differences of `f` with respect to every entry of `x`.
    fn numeric_grad(x: &Mat, f: impl Fn(&Mat) -> f64) -> Mat {
        let h = 1e-5;
        let mut g = Mat::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut p = x.clone();
            p[[r, c]] += h;
            let mut m = x.clone();
            m[[r, c]] -= h;
            g[[r, c]] = (f(&p) - f(&m)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Mat, b: &Mat, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
        }
    }

    #[test]
    fn matmul_layernorm_relu_chain() {
        let x = array![[0.3, -1.2, 0.5], [1.1, 0.2, -0.7]];
        let w = array![[0.2, -0.4], [0.9, 0.1], [-0.3, 0.6]];
        let f = |w: &Mat| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let wv = t.param(0, w);
            let g = t.param(1, &array![[1.5, 0.5]]);
            let b = t.param(2, &array![[0.1, -0.2]]);
            let h = t.matmul(xv, wv);
            let h = t.layer_norm(h, g, b);
            let h = t.relu(h);
            let lp = t.log_softmax(h);
            let loss = t.smoothed_nll(lp, &[1, 0], 0.1, 99);
            (t.scalar(loss), t.backward(loss, 3))
        };
        let (_, grads) = f(&w);
        let num = numeric_grad(&w, |w| f(w).0);
        assert_close(grads[0].as_ref().unwrap(), &num, 1e-6);
    }

    #[test]
    fn gather_and_bt_gradients() {
        let table = array![[0.1, 0.2], [-0.3, 0.4], [0.5, -0.6]];
        let f = |tb: &Mat| {
            let mut t = Tape::new();
            let e = t.param(0, tb);
            let h = t.gather(e, &[2, 0, 2], 1.7);
            let logits = t.matmul_bt(h, e);
            let lp = t.log_softmax(logits);
            let loss = t.smoothed_nll(lp, &[0, 1, 0], 0.2, 1);
            (t.scalar(loss), t.backward(loss, 1))
        };
        let (_, grads) = f(&table);
        let num = numeric_grad(&table, |x| f(x).0);
        assert_close(grads[0].as_ref().unwrap(), &num, 1e-6);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let a = t.constant(array![[1.0, 2.0]]);
        let p = t.param(0, &array![[0.5, 0.5]]);
        let s = t.add(a, p);
        let lp = t.log_softmax(s);
        let loss = t.smoothed_nll(lp, &[0], 0.0, 9);
        let g = t.backward(loss, 2);
        assert!(g[0].is_some());
        assert!(g[1].is_none());
    }
}
