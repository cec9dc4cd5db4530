use ndarray::ArrayView2;

use super::tape::Mat;

/// Sum over non-pad rows of `(1 − eps)·NLL(target) + eps·mean_j NLL(j)`,
/// together with the number of rows counted.
pub(crate) fn smoothed_nll_sum(
    log_probs: ArrayView2<f64>,
    targets: &[u32],
    eps: f64,
    pad: u32,
) -> (f64, usize) {
    let vocab = log_probs.ncols() as f64;
    let mut total = 0.0;
    let mut tokens = 0;
    for (row, &t) in log_probs.rows().into_iter().zip(targets) {
        if t == pad {
            continue;
        }
        let nll = -row[t as usize];
        let smooth = -row.sum() / vocab;
        total += (1.0 - eps) * nll + eps * smooth;
        tokens += 1;
    }
    (total, tokens)
}

/// Label-smoothed cross-entropy averaged over non-pad targets.
/// Returns `(loss, token_count)`; the loss is 0 when every target is padding.
pub fn loss_label_smoothed(log_probs: &Mat, targets: &[u32], eps: f64, pad_id: u32) -> (f64, usize) {
    assert!((0.0..1.0).contains(&eps), "smoothing must lie in [0, 1)");
    let (sum, n) = smoothed_nll_sum(log_probs.view(), targets, eps, pad_id);
    (if n == 0 { 0.0 } else { sum / n as f64 }, n)
}
