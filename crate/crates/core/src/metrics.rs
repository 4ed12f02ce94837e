//! Evaluation: macro-AUC over correctly ordered positive/negative pairs, thresholded
//! classification metrics and ROC curves.
//!
//! A pair `(a, b)` of a positive and a negative instance counts as correctly ordered when
//! `score(a) >= score(b)`, so ties earn full credit. Labels whose truth column is all
//! positive or all negative have no pairs; they are excluded from macro means and listed.

use std::cmp::Ordering;
use std::fmt::Write as _;

use log::warn;

use crate::error::{Error, Result};
use crate::matrix::{LabelMatrix, Matrix};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct AucSummary<F> {
    pub macro_auc: F,
    /// `None` for labels without both classes.
    pub per_label: Vec<Option<F>>,
    pub excluded: Vec<usize>,
}

/// Fraction of (positive, negative) pairs with `score(pos) >= score(neg)`.
/// `None` when either class is absent.
pub fn label_auc<F: Scalar>(scores: &[F], truths: &[bool]) -> Option<F> {
    assert_eq!(scores.len(), truths.len(), "score/truth length mismatch");
    let n_pos = truths.iter().filter(|&&t| t).count();
    let n_neg = truths.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut correct: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_here, mut neg_here) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if truths[order[j]] {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            j += 1;
        }
        correct += pos_here * (neg_below + neg_here);
        neg_below += neg_here;
        i = j;
    }
    let pairs = (n_pos as u64) * (n_neg as u64);
    Some(F::from_u64(correct).expect("count") / F::from_u64(pairs).expect("count"))
}

/// Unweighted mean of per-label AUC over labels that have both classes.
pub fn macro_auc<F: Scalar>(scores: &Matrix<F>, truths: &LabelMatrix) -> Result<AucSummary<F>> {
    check_shape(scores.n_rows(), scores.n_cols(), truths)?;
    let per_label: Vec<Option<F>> = (0..truths.n_labels())
        .map(|j| label_auc(&scores.column(j), &truths.column(j)))
        .collect();
    let excluded: Vec<usize> = (0..per_label.len()).filter(|&j| per_label[j].is_none()).collect();
    if !excluded.is_empty() {
        warn!("labels {excluded:?} lack positives or negatives; excluded from macro-AUC");
    }
    let valid: Vec<F> = per_label.iter().flatten().copied().collect();
    if valid.is_empty() {
        return Err(Error::NoValidLabel);
    }
    let macro_auc = valid.iter().copied().sum::<F>() / F::from_usize_lossy(valid.len());
    Ok(AucSummary {
        macro_auc,
        per_label,
        excluded,
    })
}

/// Pooled AUC over every (instance, label) cell. A convenience; not used for model selection.
pub fn micro_auc<F: Scalar>(scores: &Matrix<F>, truths: &LabelMatrix) -> Result<F> {
    check_shape(scores.n_rows(), scores.n_cols(), truths)?;
    let s: Vec<F> = scores.as_slice().to_vec();
    let t: Vec<bool> = (0..truths.n_rows()).flat_map(|i| truths.row(i).to_vec()).collect();
    label_auc(&s, &t).ok_or(Error::NoValidLabel)
}

fn check_shape(rows: usize, cols: usize, truths: &LabelMatrix) -> Result<()> {
    if rows != truths.n_rows() {
        return Err(Error::Dimension {
            expected: truths.n_rows(),
            got: rows,
        });
    }
    if cols != truths.n_labels() {
        return Err(Error::Dimension {
            expected: truths.n_labels(),
            got: cols,
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelMetrics<F> {
    pub precision: F,
    pub recall: F,
    pub f1: F,
    pub auc: Option<F>,
    /// Number of positive instances.
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport<F> {
    /// Fraction of rows whose whole label vector is correct.
    pub subset_accuracy: F,
    /// Fraction of correct (row, label) cells.
    pub labelwise_accuracy: F,
    pub macro_precision: F,
    pub macro_recall: F,
    pub macro_f1: F,
    /// `None` when no label had both classes (or no scores were supplied).
    pub macro_auc: Option<F>,
    pub per_label: Vec<LabelMetrics<F>>,
    /// Labels excluded from the macro-AUC.
    pub excluded: Vec<usize>,
}

fn ratio<F: Scalar>(num: usize, den: usize) -> F {
    if den == 0 {
        F::zero()
    } else {
        F::from_usize_lossy(num) / F::from_usize_lossy(den)
    }
}

fn mean<F: Scalar>(values: impl Iterator<Item = F>) -> F {
    let v: Vec<F> = values.collect();
    if v.is_empty() {
        F::zero()
    } else {
        v.iter().copied().sum::<F>() / F::from_usize_lossy(v.len())
    }
}

/// Thresholded metrics from boolean predictions. Precision and recall use 0/0 → 0.
pub fn classification_report<F: Scalar>(predictions: &LabelMatrix, truths: &LabelMatrix) -> Result<MetricsReport<F>> {
    check_shape(predictions.n_rows(), predictions.n_labels(), truths)?;
    let (n, l) = (truths.n_rows(), truths.n_labels());
    let exact = (0..n).filter(|&i| predictions.row(i) == truths.row(i)).count();
    let mut correct_cells = 0;
    let mut per_label = Vec::with_capacity(l);
    for j in 0..l {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for i in 0..n {
            match (predictions.get(i, j), truths.get(i, j)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        correct_cells += tp + tn;
        let precision: F = ratio(tp, tp + fp);
        let recall: F = ratio(tp, tp + fn_);
        let f1 = if precision + recall > F::zero() {
            (precision + precision) * recall / (precision + recall)
        } else {
            F::zero()
        };
        per_label.push(LabelMetrics {
            precision,
            recall,
            f1,
            auc: None,
            support: tp + fn_,
        });
    }
    Ok(MetricsReport {
        subset_accuracy: ratio(exact, n),
        labelwise_accuracy: ratio(correct_cells, n * l),
        macro_precision: mean(per_label.iter().map(|m| m.precision)),
        macro_recall: mean(per_label.iter().map(|m| m.recall)),
        macro_f1: mean(per_label.iter().map(|m| m.f1)),
        macro_auc: None,
        per_label,
        excluded: Vec::new(),
    })
}

/// `scores[i][j] >= thresholds[j]`.
pub fn threshold_scores<F: Scalar>(scores: &Matrix<F>, thresholds: &[F]) -> LabelMatrix {
    let rows: Vec<Vec<bool>> = scores
        .rows_iter()
        .map(|r| r.iter().zip(thresholds).map(|(s, t)| s >= t).collect())
        .collect();
    if rows.is_empty() {
        return LabelMatrix::from_rows::<Vec<bool>>(&[]).expect("empty");
    }
    LabelMatrix::from_rows(&rows).expect("uniform rows")
}

/// Full report from scores: thresholded metrics plus per-label and macro AUC.
pub fn evaluate<F: Scalar>(scores: &Matrix<F>, truths: &LabelMatrix, thresholds: &[F]) -> Result<MetricsReport<F>> {
    if thresholds.len() != scores.n_cols() {
        return Err(Error::Dimension {
            expected: scores.n_cols(),
            got: thresholds.len(),
        });
    }
    let mut report = classification_report(&threshold_scores(scores, thresholds), truths)?;
    match macro_auc(scores, truths) {
        Ok(summary) => {
            for (m, a) in report.per_label.iter_mut().zip(&summary.per_label) {
                m.auc = *a;
            }
            report.macro_auc = Some(summary.macro_auc);
            report.excluded = summary.excluded;
        }
        Err(Error::NoValidLabel) => {
            warn!("no label has both classes; macro-AUC undefined");
            report.excluded = (0..truths.n_labels()).collect();
        }
        Err(e) => return Err(e),
    }
    Ok(report)
}

/// ROC curve: one point per distinct score, thresholds descending, from (0,0) to (1,1).
pub fn roc_points<F: Scalar>(scores: &[F], truths: &[bool]) -> Result<Vec<(F, F)>> {
    if scores.len() != truths.len() {
        return Err(Error::Dimension {
            expected: truths.len(),
            got: scores.len(),
        });
    }
    let n_pos = truths.iter().filter(|&&t| t).count();
    let n_neg = truths.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("ROC needs both positive and negative instances".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let mut points = vec![(F::zero(), F::zero())];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if truths[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((ratio(fp, n_neg), ratio(tp, n_pos)));
    }
    Ok(points)
}

/// Trapezoidal area under a polyline of (fpr, tpr) points.
pub fn trapezoid_area<F: Scalar>(points: &[(F, F)]) -> F {
    let half = F::from_f64_lossy(0.5);
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * half)
        .sum()
}

pub fn roc_to_tsv<F: Scalar>(points: &[(F, F)]) -> String {
    let mut out = String::from("fpr\ttpr\n");
    for (x, y) in points {
        let _ = writeln!(out, "{x}\t{y}");
    }
    out
}

impl<F: Scalar> MetricsReport<F> {
    pub(crate) fn headline(&self) -> Vec<(&'static str, Option<F>)> {
        vec![
            ("subset_accuracy", Some(self.subset_accuracy)),
            ("labelwise_accuracy", Some(self.labelwise_accuracy)),
            ("macro_precision", Some(self.macro_precision)),
            ("macro_recall", Some(self.macro_recall)),
            ("macro_f1", Some(self.macro_f1)),
            ("macro_auc", self.macro_auc),
        ]
    }

    /// Two blocks: headline metrics, then one row per label.
    pub fn to_tsv(&self, label_names: &[String]) -> String {
        let mut out = String::from("metric\tvalue\n");
        for (name, v) in self.headline() {
            let _ = writeln!(out, "{name}\t{}", fmt_opt(v));
        }
        out.push_str("\nlabel\tprecision\trecall\tf1\tauc\tsupport\n");
        for (j, m) in self.per_label.iter().enumerate() {
            let name = label_names.get(j).map_or_else(|| j.to_string(), Clone::clone);
            let _ = writeln!(
                out,
                "{name}\t{}\t{}\t{}\t{}\t{}",
                m.precision,
                m.recall,
                m.f1,
                fmt_opt(m.auc),
                m.support
            );
        }
        out
    }

    /// Aligned plain-text table.
    pub fn to_text(&self, label_names: &[String]) -> String {
        let mut out = String::new();
        for (name, v) in self.headline() {
            let _ = writeln!(out, "{name:<20} {}", fmt_fixed(v));
        }
        let width = label_names.iter().map(String::len).max().unwrap_or(5).max(5);
        let _ = writeln!(
            out,
            "\n{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>7}",
            "label", "precision", "recall", "f1", "auc", "support"
        );
        for (j, m) in self.per_label.iter().enumerate() {
            let name = label_names.get(j).map_or_else(|| j.to_string(), Clone::clone);
            let _ = writeln!(
                out,
                "{name:<width$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>7}",
                fmt_fixed(Some(m.precision)),
                fmt_fixed(Some(m.recall)),
                fmt_fixed(Some(m.f1)),
                fmt_fixed(m.auc),
                m.support
            );
        }
        out
    }
}

pub(crate) fn fmt_opt<F: Scalar>(v: Option<F>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub(crate) fn fmt_fixed<F: Scalar>(v: Option<F>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{:.4}", x.to_f64_exact()))
}
