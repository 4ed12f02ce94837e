//! Per-sequence feature vectors: pooled language-model embeddings read from disk, or one-hot.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::seqio::{residue_rank, Dataset, AMINO_ACIDS};

/// Default one-hot sequence length; longer sequences are truncated, shorter ones padded.
pub const DEFAULT_MAX_LEN: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    EmbeddingFile,
    OneHot { max_len: usize },
}

/// Feature rows keyed by sequence id.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix<F> {
    pub ids: Vec<String>,
    pub values: Matrix<F>,
    pub source: FeatureSource,
}

impl<F: Scalar> FeatureMatrix<F> {
    pub fn new(ids: Vec<String>, values: Matrix<F>, source: FeatureSource) -> Result<Self> {
        if ids.len() != values.n_rows() {
            return Err(Error::Dimension {
                expected: ids.len(),
                got: values.n_rows(),
            });
        }
        if !values.is_finite() {
            return Err(Error::InvalidArgument("non-finite feature value".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::DuplicateId(dup.clone()));
        }
        Ok(Self { ids, values, source })
    }

    pub fn dim(&self) -> usize {
        self.values.n_cols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Keeps only the given feature columns; row order and ids are unchanged.
    pub fn project(&self, features: &[usize]) -> Result<Self> {
        Ok(Self {
            ids: self.ids.clone(),
            values: self.values.select_cols(features)?,
            source: self.source,
        })
    }

    /// Serializes in the embedding file format (`#dim d` header, tab-separated rows).
    pub fn to_tsv(&self) -> String {
        let mut out = format!("#dim {}\n", self.dim());
        for (id, row) in self.ids.iter().zip(self.values.rows_iter()) {
            out.push_str(id);
            for v in row {
                let _ = write!(out, "\t{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Reads an embedding file. Cells may be separated by tabs or other ASCII whitespace.
pub fn load_embeddings<F: Scalar>(text: &str) -> Result<FeatureMatrix<F>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing '#dim' header".into(),
    })?;
    let dim: usize = header
        .strip_prefix("#dim")
        .and_then(|rest| rest.trim().parse().ok())
        .filter(|&d| d > 0)
        .ok_or(Error::Parse {
            line: 1,
            msg: format!("expected '#dim <d>' header, got '{header}'"),
        })?;

    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in lines {
        let mut cells = line.split_ascii_whitespace();
        let id = cells.next().expect("non-blank line has a token");
        if !seen.insert(id.to_string()) {
            return Err(Error::DuplicateId(id.to_string()));
        }
        let before = data.len();
        for cell in cells {
            let v: F = cell.parse().map_err(|_| Error::Parse {
                line: lineno,
                msg: format!("non-numeric cell '{cell}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("non-finite cell '{cell}'"),
                });
            }
            data.push(v);
        }
        let got = data.len() - before;
        if got != dim {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("row '{id}' has {got} values, header declares {dim}"),
            });
        }
        ids.push(id.to_string());
    }
    let values = Matrix::from_vec(ids.len(), dim, data)?;
    FeatureMatrix::new(ids, values, FeatureSource::EmbeddingFile)
}

/// Column means of a residue-level matrix (L × d) → d-vector.
pub fn mean_pool<F: Scalar>(residues: &Matrix<F>) -> Result<Vec<F>> {
    if residues.n_rows() == 0 || residues.n_cols() == 0 {
        return Err(Error::InvalidArgument("cannot pool an empty matrix".into()));
    }
    let n = F::from_usize_lossy(residues.n_rows());
    Ok((0..residues.n_cols())
        .map(|j| crate::scalar::stable_sum(residues.rows_iter().map(|r| r[j])) / n)
        .collect())
}

/// Position-major one-hot encoding: residue `a` at position `i` sets `20·i + rank(a)`.
pub fn one_hot_encode<F: Scalar>(residues: &str, max_len: usize) -> Result<Vec<F>> {
    if residues.is_empty() {
        return Err(Error::EmptySequence(String::new()));
    }
    let mut out = vec![F::zero(); AMINO_ACIDS.len() * max_len];
    for (i, b) in residues.bytes().enumerate() {
        let rank = residue_rank(b).ok_or(Error::IllegalResidue {
            id: String::new(),
            symbol: b as char,
            line: None,
        })?;
        if i < max_len {
            out[AMINO_ACIDS.len() * i + rank] = F::one();
        }
    }
    Ok(out)
}

/// One-hot feature matrix for a whole dataset.
pub fn one_hot_matrix<F: Scalar>(dataset: &Dataset, max_len: usize) -> Result<FeatureMatrix<F>> {
    let mut data = Vec::with_capacity(dataset.len() * 20 * max_len);
    for rec in &dataset.records {
        let v = one_hot_encode::<F>(&rec.residues, max_len).map_err(|e| match e {
            Error::EmptySequence(_) => Error::EmptySequence(rec.id.clone()),
            Error::IllegalResidue { symbol, line, .. } => Error::IllegalResidue {
                id: rec.id.clone(),
                symbol,
                line,
            },
            other => other,
        })?;
        data.extend(v);
    }
    let values = Matrix::from_vec(dataset.len(), 20 * max_len, data)?;
    FeatureMatrix::new(
        dataset.records.iter().map(|r| r.id.clone()).collect(),
        values,
        FeatureSource::OneHot { max_len },
    )
}

/// Aligns feature rows to the dataset's record order. Every missing id is reported.
pub fn join<F: Scalar>(dataset: &Dataset, features: &FeatureMatrix<F>) -> Result<Matrix<F>> {
    let index: HashMap<&str, usize> = features
        .ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut rows = Vec::with_capacity(dataset.len());
    let mut missing = Vec::new();
    for rec in &dataset.records {
        match index.get(rec.id.as_str()) {
            Some(&i) => rows.push(i),
            None => missing.push(rec.id.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }
    if rows.is_empty() {
        return Matrix::from_vec(0, features.dim(), Vec::new());
    }
    Ok(features.values.select_rows(&rows))
}
