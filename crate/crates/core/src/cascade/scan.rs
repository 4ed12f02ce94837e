//! Multi-grained scanning: a fixed-width window slides over the feature vector, every window
//! inherits its parent row's labels, and the class vectors predicted for each window are
//! concatenated into the transformed representation.

use rayon::prelude::*;

use super::quartet_configs;
use crate::error::{Error, Result};
use crate::forest::{assign_folds, Forest};
use crate::matrix::{LabelMatrix, Matrix};
use crate::rng::derive_seed;
use crate::scalar::Scalar;

pub const DEFAULT_WINDOW: usize = 100;
pub const DEFAULT_STRIDE: usize = 1;
pub const DEFAULT_SCAN_TREES: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanConfig {
    pub window: usize,
    pub stride: usize,
    pub n_trees: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            stride: DEFAULT_STRIDE,
            n_trees: DEFAULT_SCAN_TREES,
        }
    }
}

/// `⌊(d − w)/s⌋ + 1`.
pub fn window_count(d: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 {
        return Err(Error::InvalidArgument("window and stride must be positive".into()));
    }
    if window > d {
        return Err(Error::InvalidArgument(format!("window {window} exceeds input dimension {d}")));
    }
    Ok((d - window) / stride + 1)
}

/// Contiguous windows of `v`, left to right.
pub fn scan_windows<F: Scalar>(v: &[F], window: usize, stride: usize) -> Result<Vec<&[F]>> {
    let count = window_count(v.len(), window, stride)?;
    Ok((0..count).map(|k| &v[k * stride..k * stride + window]).collect())
}

/// Window instances of the given rows, each carrying its parent row's labels.
fn window_instances<F: Scalar>(
    x: &Matrix<F>,
    y: &LabelMatrix,
    rows: &[usize],
    window: usize,
    stride: usize,
) -> Result<(Matrix<F>, LabelMatrix)> {
    let count = window_count(x.n_cols(), window, stride)?;
    let mut data = Vec::with_capacity(rows.len() * count * window);
    let mut labels = Vec::with_capacity(rows.len() * count);
    for &r in rows {
        for w in scan_windows(x.row(r), window, stride)? {
            data.extend_from_slice(w);
            labels.push(y.row(r).to_vec());
        }
    }
    Ok((
        Matrix::from_vec(rows.len() * count, window, data)?,
        LabelMatrix::from_rows(&labels)?,
    ))
}

/// Forest quartet fitted on window instances.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanningModel<F> {
    pub(crate) window: usize,
    pub(crate) stride: usize,
    pub(crate) input_dim: usize,
    pub(crate) n_labels: usize,
    /// Order: RF1, RF2, CRF1, CRF2.
    pub(crate) forests: Vec<Forest<F>>,
}

impl<F: Scalar> ScanningModel<F> {
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn forests(&self) -> &[Forest<F>] {
        &self.forests
    }

    pub fn output_dim(&self) -> usize {
        transform_dim(self.input_dim, self.window, self.stride, self.n_labels).expect("validated at training")
    }

    /// Class vectors of every window, window-major then forest order.
    pub fn transform(&self, v: &[F]) -> Result<Vec<F>> {
        if v.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                got: v.len(),
            });
        }
        let mut out = Vec::with_capacity(self.output_dim());
        for w in scan_windows(v, self.window, self.stride)? {
            for f in &self.forests {
                out.extend(f.predict_unchecked(w));
            }
        }
        Ok(out)
    }

    pub fn transform_matrix(&self, x: &Matrix<F>) -> Result<Matrix<F>> {
        let rows: Vec<Vec<F>> = (0..x.n_rows())
            .into_par_iter()
            .map(|i| self.transform(x.row(i)))
            .collect::<Result<_>>()?;
        if rows.is_empty() {
            return Matrix::from_vec(0, self.output_dim(), Vec::new());
        }
        Matrix::from_rows(&rows)
    }
}

/// Transformed width: windows × labels × 4 forests.
pub fn transform_dim(d: usize, window: usize, stride: usize, n_labels: usize) -> Result<usize> {
    Ok(window_count(d, window, stride)? * n_labels * 4)
}

fn fit_quartet<F: Scalar>(
    x: &Matrix<F>,
    y: &LabelMatrix,
    rows: &[usize],
    config: &ScanConfig,
    seed: u64,
) -> Result<ScanningModel<F>> {
    let (wx, wy) = window_instances(x, y, rows, config.window, config.stride)?;
    let forests = quartet_configs(config.n_trees, seed)
        .iter()
        .map(|c| Forest::fit(&wx, &wy, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScanningModel {
        window: config.window,
        stride: config.stride,
        input_dim: x.n_cols(),
        n_labels: y.n_labels(),
        forests,
    })
}

/// Fits the scanning quartet on all window instances of `x`.
pub fn train_scanner<F: Scalar>(x: &Matrix<F>, y: &LabelMatrix, config: &ScanConfig, seed: u64) -> Result<ScanningModel<F>> {
    if x.n_rows() == 0 {
        return Err(Error::InvalidArgument("cannot train a scanner on zero rows".into()));
    }
    let rows: Vec<usize> = (0..x.n_rows()).collect();
    fit_quartet(x, y, &rows, config, seed)
}

/// Scanner on all rows plus out-of-fold transforms of the training rows.
pub(crate) fn train_scanner_out_of_fold<F: Scalar>(
    x: &Matrix<F>,
    y: &LabelMatrix,
    config: &ScanConfig,
    k_inner: usize,
    seed: u64,
) -> Result<(ScanningModel<F>, Matrix<F>)> {
    let full = train_scanner(x, y, config, seed)?;
    let n = x.n_rows();
    let folds = assign_folds(n, k_inner, derive_seed(seed, 0x5CA7));
    let mut out = Matrix::zeros(n, full.output_dim());
    for k in 0..k_inner {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| folds[i] == k);
        if test.is_empty() {
            continue;
        }
        let partial = fit_quartet(x, y, &train, config, derive_seed(seed, k as u64 + 1))?;
        for &i in &test {
            out.row_mut(i).copy_from_slice(&partial.transform(x.row(i))?);
        }
    }
    Ok((full, out))
}
