use crate::scalar::Scalar;

/// Multi-label Gini impurity `Σ_k 2·p_k·(1 − p_k)` of a per-label positive-fraction vector.
pub fn multi_label_gini<F: Scalar>(dist: &[F]) -> F {
    let two = F::one() + F::one();
    dist.iter().fold(F::zero(), |acc, &p| acc + two * p * (F::one() - p))
}

/// `n · Gini` of a node with `n` rows and per-label positive `counts`, computed from counts so
/// that pure labels contribute exactly zero.
#[inline]
pub(crate) fn weighted_gini_from_counts<F: Scalar>(counts: &[usize], n: usize) -> F {
    if n == 0 {
        return F::zero();
    }
    let nf = F::from_usize_lossy(n);
    let mut acc = F::zero();
    for &c in counts {
        if c != 0 && c != n {
            let cf = F::from_usize_lossy(c);
            acc = acc + (cf + cf) * (nf - cf) / nf;
        }
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        assert_eq!(multi_label_gini(&[0.5f64]), 0.5);
        assert_eq!(multi_label_gini(&[0.0f64; 4]), 0.0);
        assert_eq!(multi_label_gini(&[1.0f64; 4]), 0.0);
        assert_eq!(multi_label_gini(&[0.5f64; 11]), 5.5);
        assert_eq!(multi_label_gini::<f32>(&[0.5; 11]), 5.5);
    }

    #[test]
    fn count_form_matches() {
        let counts = [0, 3, 7, 10];
        let n = 10;
        let dist: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let a: f64 = weighted_gini_from_counts(&counts, n);
        assert!((a - n as f64 * multi_label_gini(&dist)).abs() < 1e-12);
    }
}
