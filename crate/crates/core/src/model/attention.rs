//! Scaled dot-product attention, single- and multi-head.

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};

use super::ModelError;

type Mat = Array2<f64>;

/// Layout of a batched multi-head attention call.
///
/// Queries are `batch * tq` rows and keys/values `batch * tk` rows, row
/// `b * t + i` holding position `i` of sequence `b`. Keys at positions
/// `>= key_lens[b]` are masked; with `causal`, query `i` sees keys `<= i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnShape {
    pub batch: usize,
    pub tq: usize,
    pub tk: usize,
    pub heads: usize,
    pub key_lens: Vec<usize>,
    pub causal: bool,
}

/// Row-wise softmax of `scores` over unmasked entries; masked entries get
/// probability zero. Fully masked rows are left all-zero.
fn masked_softmax(scores: &mut Mat, masked: impl Fn(usize, usize) -> bool) {
    for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
        let mut max = f64::NEG_INFINITY;
        for (j, x) in row.iter_mut().enumerate() {
            if masked(i, j) {
                *x = f64::NEG_INFINITY;
            } else {
                max = max.max(*x);
            }
        }
        if max == f64::NEG_INFINITY {
            row.fill(0.0);
            continue;
        }
        let mut sum = 0.0;
        row.mapv_inplace(|x| {
            let e = (x - max).exp();
            sum += e;
            e
        });
        row.mapv_inplace(|e| e / sum);
    }
}

/// `softmax(q kᵀ / √d_k + mask) v` for a single head, returning the output
/// and the probability matrix. `masked(i, j)` excludes key `j` for query `i`.
pub fn attend(
    q: ArrayView2<f64>,
    k: ArrayView2<f64>,
    v: ArrayView2<f64>,
    masked: impl Fn(usize, usize) -> bool,
) -> (Mat, Mat) {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let mut p = q.dot(&k.t()) * scale;
    masked_softmax(&mut p, masked);
    let out = p.dot(&v);
    (out, p)
}

/// Single-head attention on plain matrices; `mask[[i, j]] == true` hides key
/// `j` from query `i`.
pub fn attention(q: &Mat, k: &Mat, v: &Mat, mask: Option<&Array2<bool>>) -> Result<Mat, ModelError> {
    if q.ncols() != k.ncols() {
        return Err(ModelError::ShapeMismatch(format!(
            "query width {} vs key width {}",
            q.ncols(),
            k.ncols()
        )));
    }
    if k.nrows() != v.nrows() {
        return Err(ModelError::ShapeMismatch(format!(
            "{} keys vs {} values",
            k.nrows(),
            v.nrows()
        )));
    }
    if let Some(m) = mask {
        if m.dim() != (q.nrows(), k.nrows()) {
            return Err(ModelError::ShapeMismatch(format!(
                "mask {:?} vs scores {:?}",
                m.dim(),
                (q.nrows(), k.nrows())
            )));
        }
    }
    let (out, _) = attend(q.view(), k.view(), v.view(), |i, j| mask.is_some_and(|m| m[[i, j]]));
    Ok(out)
}

fn head_cols(shape: &AttnShape, width: usize, h: usize) -> std::ops::Range<usize> {
    let dk = width / shape.heads;
    h * dk..(h + 1) * dk
}

pub(crate) fn attention_forward(q: &Mat, k: &Mat, v: &Mat, shape: &AttnShape) -> (Mat, Vec<Mat>) {
    let d = q.ncols();
    let mut out = Mat::zeros((q.nrows(), v.ncols()));
    let mut probs = Vec::with_capacity(shape.batch * shape.heads);
    for b in 0..shape.batch {
        let qr = b * shape.tq..(b + 1) * shape.tq;
        let kr = b * shape.tk..(b + 1) * shape.tk;
        let klen = shape.key_lens[b];
        for h in 0..shape.heads {
            let cols = head_cols(shape, d, h);
            let (o, p) = attend(
                q.slice(s![qr.clone(), cols.clone()]),
                k.slice(s![kr.clone(), cols.clone()]),
                v.slice(s![kr.clone(), cols.clone()]),
                |i, j| j >= klen || (shape.causal && j > i),
            );
            out.slice_mut(s![qr.clone(), cols]).assign(&o);
            probs.push(p);
        }
    }
    (out, probs)
}

pub(crate) fn attention_backward(
    dout: &Mat,
    q: &Mat,
    k: &Mat,
    v: &Mat,
    shape: &AttnShape,
    probs: &[Mat],
) -> (Mat, Mat, Mat) {
    let d = q.ncols();
    let scale = 1.0 / ((d / shape.heads) as f64).sqrt();
    let mut dq = Mat::zeros(q.raw_dim());
    let mut dk = Mat::zeros(k.raw_dim());
    let mut dv = Mat::zeros(v.raw_dim());
    for b in 0..shape.batch {
        let qr = b * shape.tq..(b + 1) * shape.tq;
        let kr = b * shape.tk..(b + 1) * shape.tk;
        for h in 0..shape.heads {
            let cols = head_cols(shape, d, h);
            let p = &probs[b * shape.heads + h];
            let do_ = dout.slice(s![qr.clone(), cols.clone()]);
            let qh = q.slice(s![qr.clone(), cols.clone()]);
            let kh = k.slice(s![kr.clone(), cols.clone()]);
            let vh = v.slice(s![kr.clone(), cols.clone()]);

            add_into(dv.slice_mut(s![kr.clone(), cols.clone()]), &p.t().dot(&do_));
            let dp = do_.dot(&vh.t());
            // dS = P ∘ (dP − rowsum(dP ∘ P))
            let mut ds = &dp * p;
            let row_dot = ds.sum_axis(Axis(1));
            Zip::from(ds.rows_mut())
                .and(&row_dot)
                .and(p.rows())
                .for_each(|mut r, &rd, pr| {
                    Zip::from(&mut r).and(&pr).for_each(|x, &pp| *x -= pp * rd);
                });
            ds *= scale;
            add_into(dq.slice_mut(s![qr.clone(), cols.clone()]), &ds.dot(&kh));
            add_into(dk.slice_mut(s![kr.clone(), cols]), &ds.t().dot(&qh));
        }
    }
    (dq, dk, dv)
}

fn add_into(mut dst: ArrayViewMut2<f64>, src: &Mat) {
    dst += src;
}
