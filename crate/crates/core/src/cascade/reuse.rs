use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Positions of label `j`'s entries in a representation of `n_forests` class vectors of
/// width `n_labels` laid out forest-major.
#[inline]
pub(crate) fn label_slots(j: usize, n_labels: usize, n_forests: usize) -> impl Iterator<Item = usize> {
    (0..n_forests).map(move |f| f * n_labels + j)
}

/// Measure-aware feature reuse. For each label whose current confidence falls below its
/// threshold (the best confidence recorded at earlier levels) the label's class-vector slice
/// is copied from `prev`. Returns the merged representation and the per-label choice.
pub fn feature_reuse<F: Scalar>(
    current: &Matrix<F>,
    prev: &Matrix<F>,
    current_conf: &[F],
    threshold: &[F],
) -> Result<(Matrix<F>, Vec<bool>)> {
    let l = current_conf.len();
    if threshold.len() != l {
        return Err(Error::Dimension {
            expected: l,
            got: threshold.len(),
        });
    }
    if current.n_rows() != prev.n_rows() || current.n_cols() != prev.n_cols() {
        return Err(Error::Dimension {
            expected: current.n_cols(),
            got: prev.n_cols(),
        });
    }
    if l == 0 || !current.n_cols().is_multiple_of(l) {
        return Err(Error::InvalidArgument(format!(
            "representation width {} is not a multiple of {l} labels",
            current.n_cols()
        )));
    }
    let reused: Vec<bool> = current_conf.iter().zip(threshold).map(|(c, t)| c < t).collect();
    let mut out = current.clone();
    for i in 0..out.n_rows() {
        apply_reuse(out.row_mut(i), prev.row(i), &reused);
    }
    Ok((out, reused))
}

/// Copies reused labels' slices from `prev` into `current` in place.
pub(crate) fn apply_reuse<F: Scalar>(current: &mut [F], prev: &[F], reused: &[bool]) {
    let l = reused.len();
    let n_forests = current.len() / l;
    for (j, _) in reused.iter().enumerate().filter(|(_, &r)| r) {
        for k in label_slots(j, l, n_forests) {
            current[k] = prev[k];
        }
    }
}
