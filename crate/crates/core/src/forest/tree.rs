use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::gini::weighted_gini_from_counts;
use crate::matrix::{LabelMatrix, Matrix};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// How split features and thresholds are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ForestKind {
    /// ⌊√d⌋ candidate features per node, best Gini split among them.
    Random,
    /// Uniformly random feature and uniformly random threshold in its observed range.
    CompletelyRandom,
}

impl ForestKind {
    pub fn name(self) -> &'static str {
        match self {
            ForestKind::Random => "random",
            ForestKind::CompletelyRandom => "completely-random",
        }
    }

    pub fn default_min_samples_leaf(self) -> usize {
        match self {
            ForestKind::Random => 2,
            ForestKind::CompletelyRandom => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeConfig {
    pub kind: ForestKind,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    /// Candidate features per node for random trees; `None` means ⌊√d⌋ (at least 1).
    pub max_features: Option<usize>,
}

impl TreeConfig {
    pub fn new(kind: ForestKind) -> Self {
        Self {
            kind,
            min_samples_leaf: kind.default_min_samples_leaf(),
            max_depth: None,
            max_features: None,
        }
    }
}

/// Number of candidate features for a `d`-dimensional input.
pub fn candidate_count(d: usize) -> usize {
    ((d as f64).sqrt().floor() as usize).max(1).min(d.max(1))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node<F> {
    Split {
        feature: usize,
        threshold: F,
        left: usize,
        right: usize,
    },
    Leaf {
        distribution: Vec<F>,
        samples: usize,
    },
}

/// A multi-label decision tree stored as a flat node arena; the root is node 0.
/// Rows with `x[feature] <= threshold` go left.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree<F> {
    pub(crate) nodes: Vec<Node<F>>,
    pub(crate) n_features: usize,
    pub(crate) n_labels: usize,
}

impl<F: Scalar> Tree<F> {
    pub(crate) fn from_parts(nodes: Vec<Node<F>>, n_features: usize, n_labels: usize) -> Self {
        Self {
            nodes,
            n_features,
            n_labels,
        }
    }

    pub fn nodes(&self) -> &[Node<F>] {
        &self.nodes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn leaf_index(&self, x: &[F]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { .. } => return i,
            }
        }
    }

    /// Leaf distribution reached by `x`. Panics if `x` is shorter than the training width.
    pub fn predict(&self, x: &[F]) -> &[F] {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { distribution, .. } => distribution,
            Node::Split { .. } => unreachable!("leaf_index returns leaves"),
        }
    }

    pub fn depth(&self) -> usize {
        fn go<F>(nodes: &[Node<F>], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// A chosen split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Split<F> {
    pub feature: usize,
    pub threshold: F,
    /// Sample-weighted child impurity `(n_L·Gini_L + n_R·Gini_R) / n`.
    pub child_impurity: F,
    /// Parent Gini minus `child_impurity`.
    pub decrease: F,
}

fn label_counts(y: &LabelMatrix, rows: &[usize]) -> Vec<usize> {
    let mut counts = vec![0; y.n_labels()];
    for &r in rows {
        for (c, &b) in counts.iter_mut().zip(y.row(r)) {
            *c += b as usize;
        }
    }
    counts
}

#[inline]
fn midpoint<F: Scalar>(lo: F, hi: F) -> F {
    let two = F::one() + F::one();
    let m = lo + (hi - lo) / two;
    if m >= hi {
        lo
    } else {
        m
    }
}

/// Best Gini split of `rows` over `candidates`, scanning midpoints between consecutive
/// distinct values. Ties go to the lower feature index, then the lower threshold.
/// Returns `None` when no candidate admits a split leaving `min_leaf` rows on each side.
pub fn best_split<F: Scalar>(
    x: &Matrix<F>,
    y: &LabelMatrix,
    rows: &[usize],
    candidates: &[usize],
    min_leaf: usize,
) -> Option<Split<F>> {
    let n = rows.len();
    let min_leaf = min_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    let l = y.n_labels();
    let total = label_counts(y, rows);
    let nf = F::from_usize_lossy(n);
    let parent = weighted_gini_from_counts::<F>(&total, n) / nf;

    let mut features = candidates.to_vec();
    features.sort_unstable();
    features.dedup();

    let mut best: Option<Split<F>> = None;
    let mut order: Vec<(F, usize)> = Vec::with_capacity(n);
    let mut left = vec![0usize; l];
    let mut right = vec![0usize; l];
    for &f in &features {
        order.clear();
        order.extend(rows.iter().map(|&r| (x.get(r, f), r)));
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
        if order[0].0 == order[n - 1].0 {
            continue;
        }
        left.iter_mut().for_each(|c| *c = 0);
        for i in 0..n - 1 {
            for (c, &b) in left.iter_mut().zip(y.row(order[i].1)) {
                *c += b as usize;
            }
            let n_left = i + 1;
            let n_right = n - n_left;
            if n_left < min_leaf {
                continue;
            }
            if n_right < min_leaf {
                break;
            }
            let (lo, hi) = (order[i].0, order[i + 1].0);
            if lo == hi {
                continue;
            }
            for ((r, &t), &lc) in right.iter_mut().zip(&total).zip(&left) {
                *r = t - lc;
            }
            let child = (weighted_gini_from_counts::<F>(&left, n_left)
                + weighted_gini_from_counts::<F>(&right, n_right))
                / nf;
            if best.is_none_or(|b| child < b.child_impurity) {
                best = Some(Split {
                    feature: f,
                    threshold: midpoint(lo, hi),
                    child_impurity: child,
                    decrease: parent - child,
                });
            }
        }
    }
    best
}

fn completely_random_split<F: Scalar>(
    x: &Matrix<F>,
    rows: &[usize],
    min_leaf: usize,
    rng: &mut Rng,
) -> Option<(usize, F)> {
    let mut features: Vec<usize> = (0..x.n_cols()).collect();
    features.shuffle(rng);
    for f in features {
        let (mut lo, mut hi) = (F::infinity(), F::neg_infinity());
        for &r in rows {
            let v = x.get(r, f);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi <= lo {
            continue;
        }
        let u = F::from_f64_lossy(rng.random::<f64>());
        let mut t = lo + u * (hi - lo);
        if t >= hi {
            t = lo;
        }
        let n_left = rows.iter().filter(|&&r| x.get(r, f) <= t).count();
        if n_left < min_leaf || rows.len() - n_left < min_leaf {
            return None;
        }
        return Some((f, t));
    }
    None
}

fn is_pure(y: &LabelMatrix, rows: &[usize]) -> bool {
    let first = y.row(rows[0]);
    rows.iter().all(|&r| y.row(r) == first)
}

fn make_leaf<F: Scalar>(y: &LabelMatrix, rows: &[usize]) -> Node<F> {
    let n = F::from_usize_lossy(rows.len());
    let distribution = label_counts(y, rows)
        .into_iter()
        .map(|c| F::from_usize_lossy(c) / n)
        .collect();
    Node::Leaf {
        distribution,
        samples: rows.len(),
    }
}

/// Grows one tree on `rows` (indices into `x`/`y`, duplicates allowed for bootstrap samples).
pub fn train_tree<F: Scalar>(
    x: &Matrix<F>,
    y: &LabelMatrix,
    rows: &[usize],
    config: &TreeConfig,
    rng: &mut Rng,
) -> Tree<F> {
    assert!(!rows.is_empty(), "train_tree needs at least one row");
    let d = x.n_cols();
    let min_leaf = config.min_samples_leaf.max(1);
    let n_candidates = config.max_features.unwrap_or_else(|| candidate_count(d)).clamp(1, d.max(1));

    let mut nodes: Vec<Node<F>> = vec![Node::Leaf {
        distribution: Vec::new(),
        samples: 0,
    }];
    let mut stack: Vec<(usize, Vec<usize>, usize)> = vec![(0, rows.to_vec(), 0)];
    let mut feature_pool: Vec<usize> = (0..d).collect();

    while let Some((slot, node_rows, depth)) = stack.pop() {
        let stop = node_rows.len() < 2 * min_leaf
            || config.max_depth.is_some_and(|m| depth >= m)
            || is_pure(y, &node_rows);
        let split = if stop {
            None
        } else {
            match config.kind {
                ForestKind::Random => {
                    feature_pool.shuffle(rng);
                    feature_pool
                        .chunks(n_candidates)
                        .find_map(|chunk| best_split(x, y, &node_rows, chunk, min_leaf))
                        .map(|s| (s.feature, s.threshold))
                }
                ForestKind::CompletelyRandom => completely_random_split(x, &node_rows, min_leaf, rng),
            }
        };
        match split {
            None => nodes[slot] = make_leaf(y, &node_rows),
            Some((feature, threshold)) => {
                let (l_rows, r_rows): (Vec<usize>, Vec<usize>) =
                    node_rows.iter().partition(|&&r| x.get(r, feature) <= threshold);
                let left = nodes.len();
                let right = left + 1;
                let placeholder = || Node::Leaf {
                    distribution: Vec::new(),
                    samples: 0,
                };
                nodes.push(placeholder());
                nodes.push(placeholder());
                nodes[slot] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                stack.push((right, r_rows, depth + 1));
                stack.push((left, l_rows, depth + 1));
            }
        }
    }
    Tree::from_parts(nodes, d, y.n_labels())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::gini::multi_label_gini;
    use crate::rng::rng_from;

    fn col(v: &[f64]) -> Matrix<f64> {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    /// Exhaustive reference: every (feature, midpoint) pair evaluated directly from
    /// label fractions.
    fn brute_force(x: &Matrix<f64>, y: &LabelMatrix, rows: &[usize], feats: &[usize]) -> Option<(usize, f64, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        let n = rows.len() as f64;
        for &f in feats {
            let mut vals: Vec<f64> = rows.iter().map(|&r| x.get(r, f)).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            for w in vals.windows(2) {
                let t = (w[0] + w[1]) / 2.0;
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x.get(i, f) <= t);
                let frac = |s: &[usize]| -> Vec<f64> {
                    (0..y.n_labels())
                        .map(|j| s.iter().filter(|&&i| y.get(i, j)).count() as f64 / s.len() as f64)
                        .collect()
                };
                let imp = (l.len() as f64 * multi_label_gini(&frac(&l)) + r.len() as f64 * multi_label_gini(&frac(&r))) / n;
                if best.is_none_or(|b| imp < b.2 - 1e-12) {
                    best = Some((f, t, imp));
                }
            }
        }
        best
    }

    #[test]
    fn separable_one_dimensional_split() {
        let x = col(&[0.0, 0.0, 1.0, 1.0]);
        let y = LabelMatrix::from_rows(&[[false], [false], [true], [true]]).unwrap();
        let s = best_split(&x, &y, &[0, 1, 2, 3], &[0], 1).unwrap();
        assert_eq!((s.feature, s.threshold, s.child_impurity), (0, 0.5, 0.0));
        assert_eq!(s.decrease, 0.5);
    }

    #[test]
    fn constant_feature_is_leaf_signal() {
        let x = col(&[3.0, 3.0, 3.0]);
        let y = LabelMatrix::from_rows(&[[false], [true], [true]]).unwrap();
        assert!(best_split(&x, &y, &[0, 1, 2], &[0], 1).is_none());
    }

    #[test]
    fn informative_feature_beats_noise() {
        // feature 0 separates both labels, feature 1 is noise
        let x = Matrix::from_rows(&[[0.1, 0.7], [0.2, 0.1], [0.3, 0.9], [0.8, 0.2], [0.9, 0.8], [0.7, 0.3]]).unwrap();
        let y = LabelMatrix::from_rows(&[[true, false], [true, false], [true, false], [false, true], [false, true], [false, true]]).unwrap();
        let rows: Vec<usize> = (0..6).collect();
        let s = best_split(&x, &y, &rows, &[0, 1], 1).unwrap();
        let (f, t, imp) = brute_force(&x, &y, &rows, &[0, 1]).unwrap();
        assert_eq!(s.feature, 0);
        assert_eq!((s.feature, s.threshold), (f, t));
        assert!((s.child_impurity - imp).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_on_random_data() {
        let mut rng = rng_from(11);
        for _ in 0..200 {
            let n = rng.random_range(2..20);
            let d = rng.random_range(1..5);
            let l = rng.random_range(1..4);
            let xs: Vec<f64> = (0..n * d).map(|_| (rng.random_range(0..6) as f64) * 0.5).collect();
            let x = Matrix::from_vec(n, d, xs).unwrap();
            let ys: Vec<Vec<bool>> = (0..n).map(|_| (0..l).map(|_| rng.random_bool(0.4)).collect()).collect();
            let y = LabelMatrix::from_rows(&ys).unwrap();
            let rows: Vec<usize> = (0..n).collect();
            let feats: Vec<usize> = (0..d).collect();
            let got = best_split(&x, &y, &rows, &feats, 1);
            let want = brute_force(&x, &y, &rows, &feats);
            match (got, want) {
                (None, None) => {}
                (Some(g), Some(w)) => assert!((g.child_impurity - w.2).abs() < 1e-12),
                other => panic!("mismatch {other:?}"),
            }
        }
    }

    #[test]
    fn single_row_gives_single_leaf() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let y = LabelMatrix::from_rows(&[[true, false]]).unwrap();
        let t = train_tree(&x, &y, &[0], &TreeConfig::new(ForestKind::Random), &mut rng_from(0));
        assert_eq!(t.nodes().len(), 1);
        assert_eq!(t.predict(&[0.0, 0.0]), &[1.0, 0.0]);
    }

    #[test]
    fn separable_rows_make_depth_one_tree() {
        let x = col(&[0.0, 0.0, 1.0, 1.0]);
        let y = LabelMatrix::from_rows(&[[false], [false], [true], [true]]).unwrap();
        let t = train_tree(&x, &y, &[0, 1, 2, 3], &TreeConfig::new(ForestKind::Random), &mut rng_from(0));
        assert_eq!(t.depth(), 1);
        assert_eq!(t.n_leaves(), 2);
        assert_eq!(t.predict(&[0.0]), &[0.0]);
        assert_eq!(t.predict(&[1.0]), &[1.0]);
    }

    #[test]
    fn completely_random_is_reproducible() {
        let mut rng = rng_from(3);
        let xs: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
        let x = Matrix::from_vec(20, 3, xs).unwrap();
        let ys: Vec<[bool; 2]> = (0..20).map(|i| [i % 2 == 0, i % 3 == 0]).collect();
        let y = LabelMatrix::from_rows(&ys).unwrap();
        let rows: Vec<usize> = (0..20).collect();
        let cfg = TreeConfig::new(ForestKind::CompletelyRandom);
        let a = train_tree(&x, &y, &rows, &cfg, &mut rng_from(9));
        let b = train_tree(&x, &y, &rows, &cfg, &mut rng_from(9));
        assert_eq!(a, b);
        // min_samples_leaf = 1 and no depth limit: every leaf is pure
        for r in &rows {
            let p = a.predict(x.row(*r));
            assert!(p.iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }

    #[test]
    fn leaves_hold_exact_training_fractions() {
        let mut rng = rng_from(5);
        let xs: Vec<f64> = (0..120).map(|_| (rng.random_range(0..4)) as f64).collect();
        let x = Matrix::from_vec(40, 3, xs).unwrap();
        let ys: Vec<Vec<bool>> = (0..40).map(|_| (0..3).map(|_| rng.random_bool(0.5)).collect()).collect();
        let y = LabelMatrix::from_rows(&ys).unwrap();
        let rows: Vec<usize> = (0..40).collect();
        for kind in [ForestKind::Random, ForestKind::CompletelyRandom] {
            let t = train_tree(&x, &y, &rows, &TreeConfig::new(kind), &mut rng_from(1));
            let mut per_leaf: std::collections::HashMap<usize, Vec<usize>> = Default::default();
            for &r in &rows {
                per_leaf.entry(t.leaf_index(x.row(r))).or_default().push(r);
            }
            for (leaf, members) in per_leaf {
                let Node::Leaf { distribution, samples } = &t.nodes()[leaf] else { panic!() };
                assert_eq!(*samples, members.len());
                for j in 0..3 {
                    let frac = members.iter().filter(|&&r| y.get(r, j)).count() as f64 / members.len() as f64;
                    assert_eq!(distribution[j], frac);
                }
            }
        }
    }

    #[test]
    fn max_depth_is_respected() {
        let x = col(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let y = LabelMatrix::from_rows(&[[false], [true], [false], [true], [false], [true]]).unwrap();
        let mut cfg = TreeConfig::new(ForestKind::Random);
        cfg.max_depth = Some(1);
        cfg.min_samples_leaf = 1;
        let t = train_tree(&x, &y, &[0, 1, 2, 3, 4, 5], &cfg, &mut rng_from(0));
        assert!(t.depth() <= 1);
    }

    #[test]
    fn candidate_counts() {
        assert_eq!(candidate_count(1), 1);
        assert_eq!(candidate_count(3), 1);
        assert_eq!(candidate_count(4), 2);
        assert_eq!(candidate_count(1280), 35);
    }
}
