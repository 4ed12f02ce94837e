//! Local surrogate explanations: perturb an instance, weight the perturbations by proximity,
//! fit a ridge-damped weighted linear model of the score on standardized features. Global
//! weights average the local slopes; the top-weighted features drive feature selection.

use std::fmt::Write as _;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_from, Rng};
use crate::scalar::Scalar;

pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_RIDGE: f64 = 1e-3;
pub const DEFAULT_TOP_K: usize = 48;

/// Per-feature mean and standard deviation of the training data.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats<F> {
    pub mean: Vec<F>,
    pub std: Vec<F>,
}

impl<F: Scalar> FeatureStats<F> {
    /// Population statistics of the columns of `x`.
    pub fn from_matrix(x: &Matrix<F>) -> Result<Self> {
        if x.n_rows() == 0 {
            return Err(Error::InvalidArgument("feature statistics need at least one row".into()));
        }
        let n = F::from_usize_lossy(x.n_rows());
        let mean: Vec<F> = (0..x.n_cols())
            .map(|j| x.rows_iter().map(|r| r[j]).sum::<F>() / n)
            .collect();
        let std = (0..x.n_cols())
            .map(|j| {
                let var = x.rows_iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<F>() / n;
                var.sqrt()
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn standardize(&self, x: &[F], j: usize) -> F {
        if self.std[j] > F::zero() {
            (x[j] - self.mean[j]) / self.std[j]
        } else {
            F::zero()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExplainConfig<F> {
    pub n_samples: usize,
    /// Proximity kernel width; `None` means `0.75·√d`.
    pub kernel_width: Option<F>,
    pub ridge: F,
    pub seed: u64,
}

impl<F: Scalar> Default for ExplainConfig<F> {
    fn default() -> Self {
        Self {
            n_samples: DEFAULT_SAMPLES,
            kernel_width: None,
            ridge: F::from_f64_lossy(DEFAULT_RIDGE),
            seed: 0,
        }
    }
}

impl<F: Scalar> ExplainConfig<F> {
    pub fn kernel_width_for(&self, d: usize) -> F {
        self.kernel_width
            .unwrap_or_else(|| F::from_f64_lossy(0.75) * F::from_usize_lossy(d).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalExplanation<F> {
    pub id: String,
    pub weights: Vec<F>,
    pub intercept: F,
    pub kernel_width: F,
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalWeights<F> {
    pub weights: Vec<F>,
    pub n_instances: usize,
}

/// Draws `n_samples` points around `instance`: the instance itself first, then per-feature
/// normal draws with the feature's training standard deviation. Zero-variance features stay
/// constant. Returns the samples and their proximity weights `exp(−dist²/σ²)`, with `dist`
/// the standardized Euclidean distance to the instance.
pub fn perturb<F: Scalar>(
    instance: &[F],
    n_samples: usize,
    stats: &FeatureStats<F>,
    kernel_width: F,
    rng: &mut Rng,
) -> Result<(Matrix<F>, Vec<F>)> {
    let d = instance.len();
    if stats.dim() != d {
        return Err(Error::Dimension {
            expected: stats.dim(),
            got: d,
        });
    }
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be positive".into()));
    }
    if kernel_width <= F::zero() {
        return Err(Error::InvalidArgument("kernel width must be positive".into()));
    }
    let mut samples = Matrix::zeros(n_samples, d);
    let mut weights = Vec::with_capacity(n_samples);
    samples.row_mut(0).copy_from_slice(instance);
    weights.push(F::one());
    let width2 = kernel_width * kernel_width;
    for s in 1..n_samples {
        let row = samples.row_mut(s);
        let mut dist2 = F::zero();
        for j in 0..d {
            if stats.std[j] > F::zero() {
                let z: f64 = StandardNormal.sample(rng);
                let z = F::from_f64_lossy(z);
                row[j] = instance[j] + z * stats.std[j];
                dist2 = dist2 + z * z;
            } else {
                row[j] = instance[j];
            }
        }
        weights.push((-dist2 / width2).exp());
    }
    Ok((samples, weights))
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix, in place.
fn cholesky<F: Scalar>(a: &mut [F], n: usize) -> Result<()> {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag = diag - a[j * n + k] * a[j * n + k];
        }
        if diag <= F::zero() || !diag.is_finite() {
            return Err(Error::Inconsistent("surrogate system is singular".into()));
        }
        let diag = diag.sqrt();
        a[j * n + j] = diag;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v = v - a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / diag;
        }
    }
    Ok(())
}

fn cholesky_solve<F: Scalar>(l: &[F], n: usize, b: &mut [F]) {
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v = v - l[i * n + k] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in i + 1..n {
            v = v - l[k * n + i] * b[k];
        }
        b[i] = v / l[i * n + i];
    }
}

/// Minimizes `Σ w_i (y_i − b − z_i·β)² + ridge·|β|²` with an unpenalized intercept `b`.
/// Returns `(β, b)`.
pub fn weighted_ridge<F: Scalar>(z: &Matrix<F>, y: &[F], w: &[F], ridge: F) -> Result<(Vec<F>, F)> {
    let (n, d) = (z.n_rows(), z.n_cols());
    if y.len() != n || w.len() != n {
        return Err(Error::Dimension { expected: n, got: y.len().min(w.len()) });
    }
    let total: F = w.iter().copied().sum();
    if total <= F::zero() {
        return Err(Error::InvalidArgument("proximity weights sum to zero".into()));
    }
    let z_mean: Vec<F> = (0..d)
        .map(|j| (0..n).map(|i| w[i] * z.get(i, j)).sum::<F>() / total)
        .collect();
    let y_mean = (0..n).map(|i| w[i] * y[i]).sum::<F>() / total;

    let mut gram = vec![F::zero(); d * d];
    let mut rhs = vec![F::zero(); d];
    let mut centered = vec![F::zero(); d];
    for i in 0..n {
        for j in 0..d {
            centered[j] = z.get(i, j) - z_mean[j];
        }
        let yi = y[i] - y_mean;
        for a in 0..d {
            let wa = w[i] * centered[a];
            rhs[a] = rhs[a] + wa * yi;
            for b in 0..=a {
                gram[a * d + b] = gram[a * d + b] + wa * centered[b];
            }
        }
    }
    for a in 0..d {
        gram[a * d + a] = gram[a * d + a] + ridge;
        for b in 0..a {
            gram[b * d + a] = gram[a * d + b];
        }
    }
    cholesky(&mut gram, d)?;
    cholesky_solve(&gram, d, &mut rhs);
    let intercept = y_mean - rhs.iter().zip(&z_mean).map(|(b, m)| *b * *m).sum::<F>();
    Ok((rhs, intercept))
}

/// Local slope of `score` around `instance` on standardized features.
pub fn local_weights<F, S>(
    score: &S,
    id: &str,
    instance: &[F],
    stats: &FeatureStats<F>,
    config: &ExplainConfig<F>,
) -> Result<LocalExplanation<F>>
where
    F: Scalar,
    S: Fn(&[F]) -> F + Sync + ?Sized,
{
    if config.ridge <= F::zero() {
        return Err(Error::InvalidArgument("ridge damping must be positive".into()));
    }
    let d = instance.len();
    let width = config.kernel_width_for(d);
    let mut rng = rng_from(config.seed);
    let (samples, weights) = perturb(instance, config.n_samples, stats, width, &mut rng)?;
    let y: Vec<F> = (0..samples.n_rows())
        .into_par_iter()
        .map(|i| score(samples.row(i)))
        .collect();
    let mut z = Matrix::zeros(samples.n_rows(), d);
    for i in 0..samples.n_rows() {
        let row = samples.row(i);
        for j in 0..d {
            z.set(i, j, stats.standardize(row, j));
        }
    }
    let (slopes, intercept) = weighted_ridge(&z, &y, &weights, config.ridge)?;
    Ok(LocalExplanation {
        id: id.to_string(),
        weights: slopes,
        intercept,
        kernel_width: width,
        n_samples: config.n_samples,
    })
}

/// Element-wise mean of the local weights of every row of `instances`. Instance `i` uses the
/// seed `derive_seed(config.seed, i)`.
pub fn global_weights<F, S>(
    score: &S,
    instances: &Matrix<F>,
    stats: &FeatureStats<F>,
    config: &ExplainConfig<F>,
) -> Result<GlobalWeights<F>>
where
    F: Scalar,
    S: Fn(&[F]) -> F + Sync + ?Sized,
{
    if instances.n_rows() == 0 {
        return Err(Error::InvalidArgument("global weights need at least one instance".into()));
    }
    let locals: Vec<Vec<F>> = (0..instances.n_rows())
        .map(|i| {
            let cfg = ExplainConfig {
                seed: derive_seed(config.seed, i as u64),
                ..config.clone()
            };
            local_weights(score, &i.to_string(), instances.row(i), stats, &cfg).map(|e| e.weights)
        })
        .collect::<Result<_>>()?;
    Ok(average_weights(&locals))
}

/// Element-wise mean of local weight vectors.
pub fn average_weights<F: Scalar>(locals: &[Vec<F>]) -> GlobalWeights<F> {
    let d = locals.first().map_or(0, Vec::len);
    let n = F::from_usize_lossy(locals.len().max(1));
    let weights = (0..d).map(|j| locals.iter().map(|w| w[j]).sum::<F>() / n).collect();
    GlobalWeights {
        weights,
        n_instances: locals.len(),
    }
}

/// Indices of the `k` largest weights (or largest magnitudes), descending; ties go to the
/// lower index.
pub fn select_top_k<F: Scalar>(global: &GlobalWeights<F>, k: usize, by_magnitude: bool) -> Result<Vec<usize>> {
    let d = global.weights.len();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if k > d {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds {d} features")));
    }
    let key = |j: usize| {
        let w = global.weights[j];
        if by_magnitude {
            w.abs()
        } else {
            w
        }
    };
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| {
        key(b)
            .partial_cmp(&key(a))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    Ok(idx)
}

impl<F: Scalar> GlobalWeights<F> {
    /// `feature\tweight` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("feature\tweight\n");
        for (j, w) in self.weights.iter().enumerate() {
            let _ = writeln!(out, "{j}\t{w}");
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut weights = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let mut cells = line.split('\t');
            let parse_err = |msg: String| Error::Parse { line: lineno + 1, msg };
            let idx: usize = cells
                .next()
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| parse_err("bad feature index".into()))?;
            if idx != weights.len() {
                return Err(parse_err(format!("expected feature {}, got {idx}", weights.len())));
            }
            let w: F = cells
                .next()
                .and_then(|c| c.trim().parse().ok())
                .ok_or_else(|| parse_err("bad weight".into()))?;
            weights.push(w);
        }
        Ok(Self {
            weights,
            n_instances: 0,
        })
    }
}

/// One index per line.
pub fn indices_to_text(idx: &[usize]) -> String {
    idx.iter().map(|i| format!("{i}\n")).collect()
}

pub fn parse_indices(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim().parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("'{l}' is not a feature index"),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn unit_stats(d: usize) -> FeatureStats<f64> {
        FeatureStats {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    #[test]
    fn single_sample_is_the_instance() {
        let (s, w) = perturb(&[1.0, 2.0], 1, &unit_stats(2), 1.0, &mut rng_from(0)).unwrap();
        assert_eq!(s.row(0), &[1.0, 2.0]);
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn perturbation_is_seeded_and_respects_constant_features() {
        let stats = FeatureStats {
            mean: vec![0.0, 0.0],
            std: vec![1.0, 0.0],
        };
        let a = perturb(&[0.5, 3.0], 50, &stats, 1.0, &mut rng_from(4)).unwrap();
        let b = perturb(&[0.5, 3.0], 50, &stats, 1.0, &mut rng_from(4)).unwrap();
        assert_eq!(a, b);
        assert!(a.0.column(1).iter().all(|&v| v == 3.0));
        assert!(a.1.iter().all(|&w| w > 0.0 && w <= 1.0));
    }

    #[test]
    fn linear_score_recovered() {
        let score = |x: &[f64]| 3.0 * x[0];
        let e = local_weights(&score, "i", &[0.2, -0.1, 0.4], &unit_stats(3), &ExplainConfig::default()).unwrap();
        assert!((e.weights[0] - 3.0).abs() < 0.1);
        assert!(e.weights[1].abs() < 0.1 && e.weights[2].abs() < 0.1);
    }

    #[test]
    fn constant_score_gives_zero_weights() {
        let score = |_: &[f64]| 0.7;
        let e = local_weights(&score, "i", &[0.0, 1.0], &unit_stats(2), &ExplainConfig::default()).unwrap();
        assert!(e.weights.iter().all(|w| w.abs() < 1e-9));
        assert!((e.intercept - 0.7).abs() < 1e-9);
    }

    #[test]
    fn duplicated_column_splits_weight() {
        let score = |x: &[f64]| 2.0 * x[0];
        let single = local_weights(&score, "i", &[0.1], &unit_stats(1), &ExplainConfig::default()).unwrap();
        // perturbation draws are per feature, so a duplicate is strongly correlated only
        // through the score; build the duplicate explicitly from one draw
        let mut rng = rng_from(1);
        let n = 1000;
        let base: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let z = Matrix::from_vec(n, 2, base.iter().flat_map(|&v| [v, v]).collect()).unwrap();
        let y: Vec<f64> = base.iter().map(|&v| 2.0 * v).collect();
        let (beta, _) = weighted_ridge(&z, &y, &vec![1.0; n], 1e-3).unwrap();
        assert!((beta[0] + beta[1] - single.weights[0]).abs() < 0.1);
        assert!((beta[0] - beta[1]).abs() < 1e-6);
    }

    #[test]
    fn averaging() {
        let g = average_weights(&[vec![1.0, -2.0], vec![-1.0, 2.0]]);
        assert_eq!(g.weights, vec![0.0, 0.0]);
        assert_eq!(g.n_instances, 2);
    }

    #[test]
    fn single_instance_global_equals_local() {
        let score = |x: &[f64]| x[0] - 2.0 * x[1];
        let inst = Matrix::from_rows(&[[0.3, 0.1]]).unwrap();
        let cfg = ExplainConfig { n_samples: 200, ..ExplainConfig::default() };
        let g = global_weights(&score, &inst, &unit_stats(2), &cfg).unwrap();
        let l = local_weights(&score, "0", inst.row(0), &unit_stats(2), &ExplainConfig { seed: derive_seed(0, 0), ..cfg }).unwrap();
        assert_eq!(g.weights, l.weights);
    }

    #[test]
    fn top_k_selection() {
        let g = GlobalWeights { weights: vec![0.1, 0.9, 0.5], n_instances: 1 };
        assert_eq!(select_top_k(&g, 2, false).unwrap(), vec![1, 2]);
        assert_eq!(select_top_k(&g, 3, false).unwrap(), vec![1, 2, 0]);
        assert!(select_top_k(&g, 0, false).is_err());
        assert!(select_top_k(&g, 4, false).is_err());
        let g = GlobalWeights { weights: vec![-0.8, 0.2, 0.2], n_instances: 1 };
        assert_eq!(select_top_k(&g, 2, false).unwrap(), vec![1, 2]);
        assert_eq!(select_top_k(&g, 1, true).unwrap(), vec![0]);
        let wide = GlobalWeights { weights: (0..1280).map(|i| i as f64).collect(), n_instances: 1 };
        assert_eq!(select_top_k(&wide, DEFAULT_TOP_K, false).unwrap().len(), 48);
    }

    #[test]
    fn weights_and_indices_text_round_trip() {
        let g = GlobalWeights { weights: vec![0.25, -1.5, 3.0], n_instances: 4 };
        assert_eq!(GlobalWeights::<f64>::from_tsv(&g.to_tsv()).unwrap().weights, g.weights);
        assert_eq!(parse_indices(&indices_to_text(&[4, 0, 9])).unwrap(), vec![4, 0, 9]);
        assert!(parse_indices("1\nx\n").is_err());
    }

    #[test]
    fn stats_population_moments() {
        let x = Matrix::from_rows(&[[1.0, 5.0], [3.0, 5.0]]).unwrap();
        let s = FeatureStats::from_matrix(&x).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.std, vec![1.0, 0.0]);
    }
}
