use std::fmt::Write as _;

use log::{debug, warn};
use rayon::prelude::*;

use super::confidence::log_label_confidence;
use super::growth::{GrowthMonitor, StopReason};
use super::reuse::{apply_reuse, feature_reuse};
use super::scan::{train_scanner_out_of_fold, ScanConfig, ScanningModel};
use super::{quartet_configs, QUARTET};
use crate::error::{Error, Result};
use crate::forest::{out_of_fold_predict, Forest, DEFAULT_TREES};
use crate::matrix::{LabelMatrix, Matrix};
use crate::metrics::macro_auc;
use crate::rng::derive_seed;
use crate::scalar::Scalar;

pub const DEFAULT_MAX_LAYERS: usize = 20;
pub const DEFAULT_PATIENCE: usize = 3;
pub const DEFAULT_K_INNER: usize = 3;

const FOLD_TAG: u64 = 0xF01D;
const SCAN_TAG: u64 = 0x5CA9;

#[derive(Clone, Debug, PartialEq)]
pub struct CascadeConfig {
    pub max_layers: usize,
    pub patience: usize,
    /// Inner folds for the out-of-fold class vectors that feed the next level and the
    /// growth measure.
    pub k_inner: usize,
    /// Trees per cascade forest.
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    /// Multi-grained scanning in front of the cascade; `None` feeds raw features.
    pub scan: Option<ScanConfig>,
    pub seed: u64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            max_layers: DEFAULT_MAX_LAYERS,
            patience: DEFAULT_PATIENCE,
            k_inner: DEFAULT_K_INNER,
            n_trees: DEFAULT_TREES,
            max_depth: None,
            scan: None,
            seed: 0,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.max_layers == 0 {
            return bad("max_layers must be at least 1");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.k_inner < 2 {
            return bad("k_inner must be at least 2");
        }
        if self.n_trees == 0 {
            return bad("n_trees must be positive");
        }
        if let Some(s) = &self.scan {
            if s.window == 0 || s.stride == 0 || s.n_trees == 0 {
                return bad("scan window, stride and trees must be positive");
            }
        }
        Ok(())
    }

    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "max_layers={}", self.max_layers);
        let _ = writeln!(out, "patience={}", self.patience);
        let _ = writeln!(out, "k_inner={}", self.k_inner);
        let _ = writeln!(out, "trees={}", self.n_trees);
        let _ = writeln!(
            out,
            "max_depth={}",
            self.max_depth.map_or_else(|| "none".into(), |d| d.to_string())
        );
        let _ = writeln!(out, "scanning={}", self.scan.is_some());
        if let Some(s) = &self.scan {
            let _ = writeln!(out, "window={}", s.window);
            let _ = writeln!(out, "stride={}", s.stride);
            let _ = writeln!(out, "scan_trees={}", s.n_trees);
        }
        let _ = writeln!(out, "seed={}", self.seed);
        out
    }
}

/// One cascade level: the forest quartet and its reuse bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeLevel<F> {
    /// Order: RF1, RF2, CRF1, CRF2.
    pub(crate) forests: Vec<Forest<F>>,
    /// Log confidence per label recorded after reuse.
    pub(crate) log_confidence: Vec<F>,
    /// Labels whose slice was taken from the previous level.
    pub(crate) reused: Vec<bool>,
}

impl<F: Scalar> CascadeLevel<F> {
    pub fn forests(&self) -> &[Forest<F>] {
        &self.forests
    }

    pub fn log_confidence(&self) -> &[F] {
        &self.log_confidence
    }

    pub fn confidence(&self) -> Vec<F> {
        self.log_confidence.iter().map(|c| c.exp()).collect()
    }

    pub fn reused(&self) -> &[bool] {
        &self.reused
    }

    pub fn input_dim(&self) -> usize {
        self.forests[0].n_features()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelRecord<F> {
    pub measure: F,
    pub stop: Option<StopReason>,
}

/// A trained cascade. Prediction runs levels `1..=best_layer`.
#[derive(Clone, Debug, PartialEq)]
pub struct CascadeModel<F> {
    pub(crate) config: CascadeConfig,
    pub(crate) scanner: Option<ScanningModel<F>>,
    pub(crate) levels: Vec<CascadeLevel<F>>,
    pub(crate) best_layer: usize,
    pub(crate) history: Vec<LevelRecord<F>>,
    pub(crate) input_dim: usize,
    pub(crate) n_labels: usize,
}

/// Input of a level: the (possibly scanned) features followed by the previous level's
/// representation, if any.
pub fn level_input<F: Scalar>(features: &[F], prev: Option<&[F]>, feature_dim: usize, n_labels: usize) -> Result<Vec<F>> {
    if features.len() != feature_dim {
        return Err(Error::Dimension {
            expected: feature_dim,
            got: features.len(),
        });
    }
    let mut out = features.to_vec();
    if let Some(p) = prev {
        if p.len() != QUARTET * n_labels {
            return Err(Error::Dimension {
                expected: QUARTET * n_labels,
                got: p.len(),
            });
        }
        out.extend_from_slice(p);
    }
    Ok(out)
}

/// Per-label mean over the four class vectors of a representation.
fn label_means<F: Scalar>(repr: &[F], n_labels: usize) -> Vec<F> {
    let q = F::from_usize_lossy(QUARTET);
    (0..n_labels)
        .map(|j| (0..QUARTET).map(|f| repr[f * n_labels + j]).sum::<F>() / q)
        .collect()
}

fn mean_scores<F: Scalar>(repr: &Matrix<F>, n_labels: usize) -> Matrix<F> {
    let data: Vec<F> = repr.rows_iter().flat_map(|r| label_means(r, n_labels)).collect();
    Matrix::from_vec(repr.n_rows(), n_labels, data).expect("shape")
}

/// Trains a cascade whose growth is driven by the out-of-fold macro-AUC.
pub fn train_cascade<F: Scalar>(x: &Matrix<F>, y: &LabelMatrix, config: &CascadeConfig) -> Result<CascadeModel<F>> {
    train_cascade_with_measure(x, y, config, |_, scores, truths| Ok(macro_auc(scores, truths)?.macro_auc))
}

/// Like [`train_cascade`] with a caller-supplied growth measure. `measure` receives the
/// 1-based level index, the level's out-of-fold scores (after reuse) and the truths.
pub fn train_cascade_with_measure<F, M>(
    x: &Matrix<F>,
    y: &LabelMatrix,
    config: &CascadeConfig,
    mut measure: M,
) -> Result<CascadeModel<F>>
where
    F: Scalar,
    M: FnMut(usize, &Matrix<F>, &LabelMatrix) -> Result<F>,
{
    config.validate()?;
    let (n, l) = (x.n_rows(), y.n_labels());
    if y.n_rows() != n {
        return Err(Error::Dimension { expected: n, got: y.n_rows() });
    }
    if l == 0 {
        return Err(Error::InvalidArgument("at least one label is required".into()));
    }
    if n < config.k_inner {
        return Err(Error::InvalidArgument(format!(
            "{n} rows cannot fill {} inner folds",
            config.k_inner
        )));
    }
    for j in 0..l {
        let pos = y.positives(j);
        if pos == 0 || pos == n {
            warn!("label {j} is degenerate ({pos}/{n} positive); excluded from the growth measure");
        }
    }

    let (scanner, features) = match &config.scan {
        Some(scan) => {
            let (s, t) = train_scanner_out_of_fold(x, y, scan, config.k_inner, derive_seed(config.seed, SCAN_TAG))?;
            (Some(s), t)
        }
        None => (None, x.clone()),
    };

    let fold_seed = derive_seed(config.seed, FOLD_TAG);
    let mut monitor = GrowthMonitor::new(config.max_layers, config.patience);
    let mut levels = Vec::new();
    let mut history = Vec::new();
    let mut prev: Option<(Matrix<F>, Vec<F>)> = None;

    for t in 1..=config.max_layers {
        let input = match &prev {
            None => features.clone(),
            Some((g, _)) => features.hstack(g)?,
        };
        let mut configs = quartet_configs(config.n_trees, derive_seed(config.seed, t as u64));
        for c in &mut configs {
            c.tree.max_depth = config.max_depth;
        }

        let (oof, forests): (Vec<Matrix<F>>, Vec<Forest<F>>) = configs
            .par_iter()
            .map(|c| -> Result<(Matrix<F>, Forest<F>)> {
                Ok((
                    out_of_fold_predict(&input, y, c, config.k_inner, fold_seed)?,
                    Forest::fit(&input, y, c)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        let mut current = oof[0].clone();
        for m in &oof[1..] {
            current = current.hstack(m)?;
        }

        let averaged = mean_scores(&current, l);
        let conf: Vec<F> = (0..l).map(|j| log_label_confidence(&averaged.column(j))).collect();
        let (repr, reused, recorded) = match prev.take() {
            None => (current, vec![false; l], conf),
            Some((g, best_conf)) => {
                let (repr, reused) = feature_reuse(&current, &g, &conf, &best_conf)?;
                let recorded = (0..l).map(|j| if reused[j] { best_conf[j] } else { conf[j] }).collect();
                (repr, reused, recorded)
            }
        };

        let value = measure(t, &mean_scores(&repr, l), y)?;
        let stop = monitor.observe(value);
        debug!("level {t}: measure {value}, reused {reused:?}");
        levels.push(CascadeLevel {
            forests,
            log_confidence: recorded.clone(),
            reused,
        });
        history.push(LevelRecord { measure: value, stop });
        if stop.is_some() {
            break;
        }
        prev = Some((repr, recorded));
    }

    Ok(CascadeModel {
        config: config.clone(),
        scanner,
        best_layer: monitor.best_layer(),
        levels,
        history,
        input_dim: x.n_cols(),
        n_labels: l,
    })
}

impl<F: Scalar> CascadeModel<F> {
    pub fn config(&self) -> &CascadeConfig {
        &self.config
    }

    pub fn levels(&self) -> &[CascadeLevel<F>] {
        &self.levels
    }

    pub fn scanner(&self) -> Option<&ScanningModel<F>> {
        self.scanner.as_ref()
    }

    /// 1-based index of the best level.
    pub fn best_layer(&self) -> usize {
        self.best_layer
    }

    pub fn history(&self) -> &[LevelRecord<F>] {
        &self.history
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    /// Width of the representation consumed by level 1.
    pub fn feature_dim(&self) -> usize {
        self.scanner.as_ref().map_or(self.input_dim, |s| s.output_dim())
    }

    /// Representation (four class vectors, after reuse) of each level up to the best one.
    pub fn level_representations(&self, x: &[F]) -> Result<Vec<Vec<F>>> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let features = match &self.scanner {
            Some(s) => s.transform(x)?,
            None => x.to_vec(),
        };
        let mut reps: Vec<Vec<F>> = Vec::with_capacity(self.best_layer);
        for level in &self.levels[..self.best_layer] {
            let input = level_input(&features, reps.last().map(Vec::as_slice), self.feature_dim(), self.n_labels)?;
            let mut current: Vec<F> = level
                .forests
                .iter()
                .flat_map(|f| f.predict_unchecked(&input))
                .collect();
            if let Some(prev) = reps.last() {
                apply_reuse(&mut current, prev, &level.reused);
            }
            reps.push(current);
        }
        Ok(reps)
    }

    /// Per-label probabilities: the mean of the best level's four class vectors.
    pub fn predict(&self, x: &[F]) -> Result<Vec<F>> {
        let reps = self.level_representations(x)?;
        Ok(label_means(reps.last().expect("best_layer >= 1"), self.n_labels))
    }

    pub fn predict_matrix(&self, x: &Matrix<F>) -> Result<Matrix<F>> {
        let rows: Vec<Vec<F>> = (0..x.n_rows())
            .into_par_iter()
            .map(|i| self.predict(x.row(i)))
            .collect::<Result<_>>()?;
        let data = rows.into_iter().flatten().collect();
        Matrix::from_vec(x.n_rows(), self.n_labels, data)
    }

    /// `level\tmacro_auc\tstopped` rows.
    pub fn history_tsv(&self) -> String {
        let mut out = String::from("level\tmacro_auc\tstopped\n");
        for (t, rec) in self.history.iter().enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                t + 1,
                rec.measure,
                rec.stop.map_or("-", StopReason::name)
            );
        }
        out
    }
}
