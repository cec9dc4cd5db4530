//! Adam with bias correction and the inverse-square-root schedule.

use super::config::TrainHyper;
use super::tape::Mat;

/// Linear warmup to `peak_lr`, then decay proportional to `1/√step`.
pub fn lr_at(step: u64, hyper: &TrainHyper) -> f64 {
    let step = step.max(1) as f64;
    let warmup = hyper.warmup_updates as f64;
    hyper.peak_lr * (step / warmup).min((warmup / step).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl AdamState {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|s| (Mat::zeros(s), Mat::zeros(s)))
            .unzip();
        AdamState { step: 0, m, v }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [Mat], grads: &[Mat], state: &mut AdamState, hyper: &TrainHyper, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        ndarray::Zip::from(p)
            .and(g)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let mhat = *m / c1;
                let vhat = *v / c2;
                *p -= lr * mhat / (vhat.sqrt() + hyper.adam_eps);
            });
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Mat], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for g in grads {
            g.mapv_inplace(|x| x * k);
        }
    }
    norm
}
