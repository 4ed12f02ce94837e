use std::cmp::Ordering;

use crate::scalar::{stable_sum, Scalar};

/// Natural log of the per-label confidence
/// `Σ_{i=0..m} Π_{k≤i} p_k · Π_{k>i} (1 − p_k)` with `p` sorted in descending order.
///
/// Term `i` is the probability that exactly the `i` most probable instances are positive,
/// so the sum lies in (0, 1]. Everything is accumulated in log space; the result stays
/// meaningful when the confidence itself underflows.
pub fn log_label_confidence<F: Scalar>(probs: &[F]) -> F {
    let mut p: Vec<F> = probs.iter().map(|&v| v.max(F::zero()).min(F::one())).collect();
    p.sort_by(|a, b| b.partial_cmp(a).unwrap_or(Ordering::Equal));
    let m = p.len();

    // prefix[i] = Σ_{k<i} ln p_k, suffix[i] = Σ_{k≥i} ln(1 − p_k)
    let mut prefix = Vec::with_capacity(m + 1);
    prefix.push(F::zero());
    for &v in &p {
        let last = *prefix.last().expect("non-empty");
        prefix.push(last + v.ln());
    }
    let mut suffix = vec![F::zero(); m + 1];
    for i in (0..m).rev() {
        suffix[i] = suffix[i + 1] + (F::one() - p[i]).ln();
    }
    let terms: Vec<F> = prefix.iter().zip(&suffix).map(|(&a, &b)| a + b).collect();
    let peak = terms.iter().copied().fold(F::neg_infinity(), F::max);
    if peak == F::neg_infinity() {
        return peak;
    }
    let mut scaled: Vec<F> = terms.iter().map(|&t| (t - peak).exp()).collect();
    scaled.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    peak + stable_sum(scaled).ln()
}

/// Per-label confidence of a column of predicted probabilities; see [`log_label_confidence`].
pub fn label_confidence<F: Scalar>(probs: &[F]) -> F {
    log_label_confidence(probs).exp()
}
