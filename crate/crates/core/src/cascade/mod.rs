//! Cascade forest with multi-grained scanning, measure-aware feature reuse and
//! measure-aware layer growth.
//!
//! Every level holds two random forests and two completely-random forests. Level `t > 1`
//! consumes the original (or scanned) features followed by level `t − 1`'s four class
//! vectors. After each level the per-label confidence decides which labels keep the
//! previous representation, and the out-of-fold macro-AUC decides whether to keep growing.

mod confidence;
mod growth;
mod model;
mod reuse;
mod scan;

pub use confidence::{label_confidence, log_label_confidence};
pub use growth::{GrowthMonitor, StopReason};
pub use model::{
    level_input, train_cascade, train_cascade_with_measure, CascadeConfig, CascadeLevel, CascadeModel, LevelRecord,
    DEFAULT_K_INNER, DEFAULT_MAX_LAYERS, DEFAULT_PATIENCE,
};
pub use reuse::feature_reuse;
pub use scan::{
    scan_windows, train_scanner, transform_dim, window_count, ScanConfig, ScanningModel, DEFAULT_SCAN_TREES,
    DEFAULT_STRIDE, DEFAULT_WINDOW,
};

use crate::forest::{ForestConfig, ForestKind};
use crate::rng::derive_seed;

/// Forests per level (and per scanner).
pub const QUARTET: usize = 4;

/// RF1, RF2, CRF1, CRF2 with independent seeds.
pub(crate) fn quartet_configs(n_trees: usize, seed: u64) -> [ForestConfig; QUARTET] {
    let kinds = [
        ForestKind::Random,
        ForestKind::Random,
        ForestKind::CompletelyRandom,
        ForestKind::CompletelyRandom,
    ];
    let mut i = 0;
    kinds.map(|k| {
        i += 1;
        ForestConfig::new(k, n_trees, derive_seed(seed, i))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{LabelMatrix, Matrix};
    use crate::metrics::macro_auc;
    use crate::rng::rng_from;
    use rand::Rng as _;

    fn synthetic(n: usize, d: usize, l: usize, seed: u64) -> (Matrix<f64>, LabelMatrix) {
        let mut rng = rng_from(seed);
        let xs: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
        let x = Matrix::from_vec(n, d, xs).unwrap();
        let ys: Vec<Vec<bool>> = (0..n)
            .map(|i| (0..l).map(|j| x.get(i, j % d) + 0.1 * rng.random::<f64>() > 0.55).collect())
            .collect();
        (x, LabelMatrix::from_rows(&ys).unwrap())
    }

    fn small(max_layers: usize) -> CascadeConfig {
        CascadeConfig {
            max_layers,
            n_trees: 6,
            seed: 3,
            ..CascadeConfig::default()
        }
    }

    #[test]
    fn quartet_order() {
        let q = quartet_configs(10, 1);
        let kinds: Vec<_> = q.iter().map(|c| c.kind()).collect();
        assert_eq!(
            kinds,
            vec![ForestKind::Random, ForestKind::Random, ForestKind::CompletelyRandom, ForestKind::CompletelyRandom]
        );
        assert_ne!(q[0].seed, q[1].seed);
        assert!(q.iter().all(|c| c.n_trees == 10));
    }

    #[test]
    fn level_input_lengths() {
        let x = vec![0.0f64; 9448];
        assert_eq!(level_input(&x, None, 9448, 2).unwrap().len(), 9448);
        assert_eq!(level_input(&x, Some(&[0.0; 8]), 9448, 2).unwrap().len(), 9448 + 8);
        assert_eq!(level_input(&x, Some(&[0.0; 44]), 9448, 11).unwrap().len(), 9448 + 44);
        assert!(level_input(&x, Some(&[0.0; 43]), 9448, 11).is_err());
        assert!(level_input(&x[..10], None, 9448, 11).is_err());
    }

    #[test]
    fn single_level_is_quartet_mean() {
        let (x, y) = synthetic(40, 5, 3, 1);
        let m = train_cascade(&x, &y, &small(1)).unwrap();
        assert_eq!(m.levels().len(), 1);
        assert_eq!(m.best_layer(), 1);
        for i in 0..5 {
            let p = m.predict(x.row(i)).unwrap();
            let forests = m.levels()[0].forests();
            for j in 0..3 {
                let mean = forests.iter().map(|f| f.predict(x.row(i)).unwrap()[j]).sum::<f64>() / 4.0;
                assert_eq!(p[j], mean);
            }
        }
    }

    #[test]
    fn outputs_are_probabilities_and_deterministic() {
        let (x, y) = synthetic(45, 4, 2, 2);
        let a = train_cascade(&x, &y, &small(4)).unwrap();
        let b = train_cascade(&x, &y, &small(4)).unwrap();
        assert_eq!(a, b);
        let p = a.predict_matrix(&x).unwrap();
        assert!(p.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(a.predict(&[0.0; 3]).is_err());
    }

    #[test]
    fn history_invariants() {
        let (x, y) = synthetic(60, 6, 3, 4);
        let m = train_cascade(&x, &y, &small(20)).unwrap();
        let h: Vec<f64> = m.history().iter().map(|r| r.measure).collect();
        assert_eq!(h.len(), m.levels().len());
        let best = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first = h.iter().position(|&v| v == best).unwrap();
        assert_eq!(m.best_layer(), first + 1);
        assert!(m.levels().len() <= m.best_layer() + 3);
        assert!(h[m.best_layer() - 1] >= h[0]);
        assert!(m.history().last().unwrap().stop.is_some());
        assert!(m.history()[..h.len() - 1].iter().all(|r| r.stop.is_none()));
        assert!(m.history_tsv().starts_with("level\tmacro_auc\tstopped\n1\t"));
    }

    #[test]
    fn recorded_confidence_never_drops() {
        for seed in 0..5 {
            let (x, y) = synthetic(40, 5, 3, 10 + seed);
            let m = train_cascade(&x, &y, &CascadeConfig { seed, ..small(6) }).unwrap();
            for w in m.levels().windows(2) {
                for j in 0..3 {
                    assert!(w[1].log_confidence()[j] >= w[0].log_confidence()[j]);
                }
            }
        }
    }

    #[test]
    fn injected_measure_controls_growth() {
        let (x, y) = synthetic(30, 3, 2, 5);
        let h = [0.80, 0.85, 0.84, 0.84, 0.84, 0.99];
        let m = train_cascade_with_measure(&x, &y, &small(20), |t, _, _| Ok(h[t - 1])).unwrap();
        assert_eq!(m.levels().len(), 5);
        assert_eq!(m.best_layer(), 2);
        assert_eq!(m.history()[4].stop, Some(StopReason::Patience));

        let m = train_cascade_with_measure(&x, &y, &small(7), |t, _, _| Ok(t as f64)).unwrap();
        assert_eq!(m.levels().len(), 7);
        assert_eq!(m.history()[6].stop, Some(StopReason::MaxLayers));
    }

    #[test]
    fn scanning_front_end() {
        let (x, y) = synthetic(30, 8, 2, 6);
        let cfg = CascadeConfig {
            scan: Some(ScanConfig {
                window: 4,
                stride: 2,
                n_trees: 4,
            }),
            ..small(3)
        };
        let m = train_cascade(&x, &y, &cfg).unwrap();
        assert_eq!(m.feature_dim(), 3 * 2 * 4);
        assert_eq!(m.levels()[0].input_dim(), 24);
        if m.levels().len() > 1 {
            assert_eq!(m.levels()[1].input_dim(), 24 + 8);
        }
        assert_eq!(m.predict(x.row(0)).unwrap().len(), 2);
    }

    #[test]
    fn rejects_bad_inputs() {
        let (x, y) = synthetic(2, 3, 1, 0);
        assert!(train_cascade(&x, &y, &small(2)).is_err());
        let (x, y) = synthetic(20, 3, 1, 0);
        assert!(train_cascade(&x, &y, &CascadeConfig { k_inner: 1, ..small(2) }).is_err());
        let all_pos = LabelMatrix::from_column(&[true; 20]);
        assert!(matches!(
            train_cascade(&x, &all_pos, &small(2)),
            Err(crate::Error::NoValidLabel)
        ));
    }

    #[test]
    fn measure_matches_out_of_fold_macro_auc_range() {
        let (x, y) = synthetic(50, 4, 2, 9);
        let m = train_cascade(&x, &y, &small(2)).unwrap();
        let in_sample = macro_auc(&m.predict_matrix(&x).unwrap(), &y).unwrap().macro_auc;
        assert!(m.history().iter().all(|r| r.measure <= 1.0 && r.measure >= 0.0));
        assert!(in_sample >= 0.5);
    }
}
