use log::warn;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use super::tree::{train_tree, ForestKind, Tree, TreeConfig};
use crate::error::{Error, Result};
use crate::matrix::{LabelMatrix, Matrix};
use crate::rng::{derive_seed, rng_from, Rng};
use crate::scalar::Scalar;

pub const DEFAULT_TREES: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct ForestConfig {
    pub tree: TreeConfig,
    pub n_trees: usize,
    /// Bootstrap resampling per tree. Defaults to on for random forests only.
    pub bootstrap: bool,
    pub seed: u64,
}

impl ForestConfig {
    pub fn new(kind: ForestKind, n_trees: usize, seed: u64) -> Self {
        Self {
            tree: TreeConfig::new(kind),
            n_trees,
            bootstrap: kind == ForestKind::Random,
            seed,
        }
    }

    pub fn kind(&self) -> ForestKind {
        self.tree.kind
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self::new(ForestKind::Random, DEFAULT_TREES, 0)
    }
}

/// An ensemble of multi-label trees; predictions average leaf distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct Forest<F> {
    pub(crate) config: ForestConfig,
    pub(crate) trees: Vec<Tree<F>>,
    pub(crate) n_features: usize,
    pub(crate) n_labels: usize,
}

pub(crate) fn bootstrap_indices(n: usize, rng: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

impl<F: Scalar> Forest<F> {
    pub(crate) fn from_parts(config: ForestConfig, trees: Vec<Tree<F>>, n_features: usize, n_labels: usize) -> Self {
        Self {
            config,
            trees,
            n_features,
            n_labels,
        }
    }

    /// Trains on every row of `x`.
    pub fn fit(x: &Matrix<F>, y: &LabelMatrix, config: &ForestConfig) -> Result<Self> {
        let rows: Vec<usize> = (0..x.n_rows()).collect();
        Self::fit_rows(x, y, &rows, config)
    }

    /// Trains on the given subset of rows. Tree `i` draws from its own stream
    /// `derive_seed(seed, i)`, so the result does not depend on thread scheduling.
    pub fn fit_rows(x: &Matrix<F>, y: &LabelMatrix, rows: &[usize], config: &ForestConfig) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("cannot train a forest on zero rows".into()));
        }
        if x.n_rows() != y.n_rows() {
            return Err(Error::Dimension {
                expected: x.n_rows(),
                got: y.n_rows(),
            });
        }
        if config.n_trees == 0 {
            return Err(Error::InvalidArgument("n_trees must be positive".into()));
        }
        let trees = (0..config.n_trees)
            .into_par_iter()
            .map(|i| {
                let mut rng = rng_from(derive_seed(config.seed, i as u64));
                if config.bootstrap {
                    let sample: Vec<usize> = bootstrap_indices(rows.len(), &mut rng)
                        .into_iter()
                        .map(|k| rows[k])
                        .collect();
                    train_tree(x, y, &sample, &config.tree, &mut rng)
                } else {
                    train_tree(x, y, rows, &config.tree, &mut rng)
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            trees,
            n_features: x.n_cols(),
            n_labels: y.n_labels(),
        })
    }

    pub fn config(&self) -> &ForestConfig {
        &self.config
    }

    pub fn trees(&self) -> &[Tree<F>] {
        &self.trees
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn kind(&self) -> ForestKind {
        self.config.kind()
    }

    /// Mean of the leaf distributions over all trees.
    pub fn predict(&self, x: &[F]) -> Result<Vec<F>> {
        if x.len() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[F]) -> Vec<F> {
        let mut acc = vec![F::zero(); self.n_labels];
        for tree in &self.trees {
            for (a, &p) in acc.iter_mut().zip(tree.predict(x)) {
                *a = *a + p;
            }
        }
        let n = F::from_usize_lossy(self.trees.len());
        acc.iter_mut().for_each(|a| *a = *a / n);
        acc
    }

    /// Row-wise prediction; rows are processed in parallel and returned in order.
    pub fn predict_matrix(&self, x: &Matrix<F>) -> Result<Matrix<F>> {
        if x.n_cols() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: x.n_cols(),
            });
        }
        let data: Vec<F> = (0..x.n_rows())
            .into_par_iter()
            .flat_map_iter(|i| self.predict_unchecked(x.row(i)))
            .collect();
        Matrix::from_vec(x.n_rows(), self.n_labels, data)
    }
}

/// Deterministic fold index per row: a seeded shuffle dealt round-robin.
pub fn assign_folds(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed));
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// Predictions where each row comes from a forest trained without that row's fold.
pub fn out_of_fold_predict<F: Scalar>(
    x: &Matrix<F>,
    y: &LabelMatrix,
    config: &ForestConfig,
    k_inner: usize,
    fold_seed: u64,
) -> Result<Matrix<F>> {
    let n = x.n_rows();
    if k_inner < 2 {
        return Err(Error::InvalidArgument(format!("k_inner must be at least 2, got {k_inner}")));
    }
    if n < k_inner {
        return Err(Error::InvalidArgument(format!("{n} rows cannot fill {k_inner} folds")));
    }
    for j in 0..y.n_labels() {
        let pos = y.positives(j);
        if pos < k_inner {
            warn!("label {j} has only {pos} positive rows for {k_inner} inner folds");
        }
    }
    let folds = assign_folds(n, k_inner, fold_seed);
    let mut out = Matrix::zeros(n, y.n_labels());
    for k in 0..k_inner {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| folds[i] == k);
        let forest = Forest::fit_rows(x, y, &train, &config.with_seed(derive_seed(config.seed, k as u64 + 1)))?;
        for &i in &test {
            out.row_mut(i).copy_from_slice(&forest.predict_unchecked(x.row(i)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::tree::Node;
    use crate::metrics::macro_auc;

    fn separable() -> (Matrix<f64>, LabelMatrix) {
        (
            Matrix::from_vec(4, 1, vec![0.0, 0.0, 1.0, 1.0]).unwrap(),
            LabelMatrix::from_rows(&[[false], [false], [true], [true]]).unwrap(),
        )
    }

    fn leaf(p: Vec<f64>) -> Tree<f64> {
        Tree::from_parts(
            vec![Node::Leaf {
                distribution: p,
                samples: 1,
            }],
            1,
            2,
        )
    }

    #[test]
    fn averaging_leaf_distributions() {
        let cfg = ForestConfig::new(ForestKind::Random, 2, 0);
        let f = Forest::from_parts(cfg.clone(), vec![leaf(vec![1.0, 0.0]), leaf(vec![0.0, 1.0])], 1, 2);
        assert_eq!(f.predict(&[0.3]).unwrap(), vec![0.5, 0.5]);
        let f = Forest::from_parts(cfg, vec![leaf(vec![1.0, 0.0]), leaf(vec![1.0, 0.0])], 1, 2);
        assert_eq!(f.predict(&[0.3]).unwrap(), vec![1.0, 0.0]);
        assert!(f.predict(&[0.3, 0.1]).is_err());
    }

    #[test]
    fn single_tree_forest_is_tree_on_bootstrap() {
        let mut rng = rng_from(1);
        let xs: Vec<f64> = (0..90).map(|_| rng.random::<f64>()).collect();
        let x = Matrix::from_vec(30, 3, xs).unwrap();
        let ys: Vec<[bool; 2]> = (0..30).map(|i| [x.get(i, 0) > 0.5, x.get(i, 1) > 0.3]).collect();
        let y = LabelMatrix::from_rows(&ys).unwrap();
        let cfg = ForestConfig::new(ForestKind::Random, 1, 42);
        let f = Forest::fit(&x, &y, &cfg).unwrap();

        let mut rng = rng_from(derive_seed(42, 0));
        let sample = bootstrap_indices(30, &mut rng);
        let t = train_tree(&x, &y, &sample, &cfg.tree, &mut rng);
        assert_eq!(f.trees()[0], t);
    }

    #[test]
    fn default_has_thousand_trees() {
        assert_eq!(ForestConfig::default().n_trees, 1000);
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let (x, y) = separable();
        for kind in [ForestKind::Random, ForestKind::CompletelyRandom] {
            let cfg = ForestConfig::new(kind, 25, 9);
            assert_eq!(Forest::fit(&x, &y, &cfg).unwrap(), Forest::fit(&x, &y, &cfg).unwrap());
        }
    }

    #[test]
    fn separable_training_rows_predicted_exactly() {
        let (x, y) = separable();
        let f = Forest::fit(&x, &y, &ForestConfig::new(ForestKind::CompletelyRandom, 10, 0)).unwrap();
        for i in 0..4 {
            let p = f.predict(x.row(i)).unwrap()[0];
            assert_eq!(p, if y.get(i, 0) { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn prediction_is_within_tree_range() {
        let mut rng = rng_from(2);
        let xs: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
        let x = Matrix::from_vec(50, 4, xs).unwrap();
        let ys: Vec<[bool; 3]> = (0..50).map(|_| [rng.random_bool(0.5), rng.random_bool(0.2), rng.random_bool(0.7)]).collect();
        let y = LabelMatrix::from_rows(&ys).unwrap();
        let f = Forest::fit(&x, &y, &ForestConfig::new(ForestKind::Random, 15, 3)).unwrap();
        for _ in 0..50 {
            let q: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
            let p = f.predict(&q).unwrap();
            for j in 0..3 {
                let outs: Vec<f64> = f.trees().iter().map(|t| t.predict(&q)[j]).collect();
                let lo = outs.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = outs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                assert!(p[j] >= lo - 1e-12 && p[j] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn leave_one_out_excludes_each_row() {
        // Each row's label is unique on its x; a forest that never saw the row
        // predicts from the others only.
        let x = Matrix::from_vec(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = LabelMatrix::from_rows(&[[true], [false], [false], [false]]).unwrap();
        let cfg = ForestConfig::new(ForestKind::CompletelyRandom, 5, 0);
        let oof = out_of_fold_predict(&x, &y, &cfg, 4, 7).unwrap();
        // the only positive row was held out when row 0 was predicted
        assert_eq!(oof.get(0, 0), 0.0);
        assert_eq!(oof, out_of_fold_predict(&x, &y, &cfg, 4, 7).unwrap());
        assert!(out_of_fold_predict(&x, &y, &cfg, 5, 7).is_err());
        assert!(out_of_fold_predict(&x, &y, &cfg, 1, 7).is_err());
    }

    #[test]
    fn folds_are_balanced() {
        let f = assign_folds(11, 3, 0);
        let counts: Vec<usize> = (0..3).map(|k| f.iter().filter(|&&v| v == k).count()).collect();
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn out_of_fold_auc_close_to_in_sample_on_separable_data() {
        let mut rng = rng_from(17);
        let n = 500;
        let xs: Vec<f64> = (0..n * 4).map(|_| rng.random::<f64>()).collect();
        let x = Matrix::from_vec(n, 4, xs).unwrap();
        let ys: Vec<[bool; 2]> = (0..n).map(|i| [x.get(i, 0) > 0.5, x.get(i, 1) + x.get(i, 2) > 1.0]).collect();
        let y = LabelMatrix::from_rows(&ys).unwrap();
        let cfg = ForestConfig::new(ForestKind::Random, 30, 5);
        let oof = out_of_fold_predict(&x, &y, &cfg, 3, 1).unwrap();
        let full = Forest::fit(&x, &y, &cfg).unwrap().predict_matrix(&x).unwrap();
        let a_oof = macro_auc(&oof, &y).unwrap().macro_auc;
        let a_in = macro_auc(&full, &y).unwrap().macro_auc;
        assert!(a_oof >= a_in - 0.05, "oof {a_oof} vs in-sample {a_in}");
    }
}
