//! Two-level prediction: a binary AMP cascade gates an activity cascade that annotates
//! predicted AMPs with their target groups.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::cascade::{train_cascade, CascadeConfig, CascadeModel};
use crate::embed::{join, FeatureMatrix, FeatureSource};
use crate::error::{Error, Result};
use crate::matrix::{LabelMatrix, Matrix};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::seqio::Dataset;

/// Column of the binary cascade holding the AMP probability.
pub const AMP_COLUMN: usize = 1;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// How the pipeline's input vectors are produced and narrowed.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSpec {
    pub source: FeatureSource,
    /// Width of the vectors passed to [`PipelineModel::predict`].
    pub input_dim: usize,
    /// Columns kept before the cascades see the vector, when feature selection is in use.
    pub subset: Option<Vec<usize>>,
}

impl FeatureSpec {
    pub fn model_dim(&self) -> usize {
        self.subset.as_ref().map_or(self.input_dim, Vec::len)
    }

    fn narrow<F: Scalar>(&self, x: &[F]) -> Result<Vec<F>> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(match &self.subset {
            Some(idx) => idx.iter().map(|&j| x[j]).collect(),
            None => x.to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig<F> {
    pub binary: CascadeConfig,
    pub multilabel: CascadeConfig,
    pub amp_threshold: F,
    /// One threshold per activity label.
    pub label_thresholds: Vec<F>,
    pub subset: Option<Vec<usize>>,
}

impl<F: Scalar> PipelineConfig<F> {
    /// Both stages share `cascade` apart from their seeds; every threshold is 0.5.
    pub fn new(cascade: CascadeConfig, n_labels: usize) -> Self {
        let half = F::from_f64_lossy(DEFAULT_THRESHOLD);
        Self {
            binary: CascadeConfig {
                seed: derive_seed(cascade.seed, 1),
                ..cascade.clone()
            },
            multilabel: CascadeConfig {
                seed: derive_seed(cascade.seed, 2),
                ..cascade
            },
            amp_threshold: half,
            label_thresholds: vec![half; n_labels],
            subset: None,
        }
    }
}

pub(crate) fn check_threshold<F: Scalar>(t: F) -> Result<()> {
    if t > F::zero() && t <= F::one() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("threshold {t} outside (0, 1]")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineModel<F> {
    pub(crate) binary: CascadeModel<F>,
    pub(crate) multilabel: CascadeModel<F>,
    pub(crate) amp_threshold: F,
    pub(crate) label_thresholds: Vec<F>,
    pub(crate) label_names: Vec<String>,
    pub(crate) features: FeatureSpec,
}

/// Activity annotation of a predicted AMP.
#[derive(Clone, Debug, PartialEq)]
pub struct Activity<F> {
    pub scores: Vec<F>,
    pub labels: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict<F> {
    pub id: String,
    pub amp_score: F,
    /// Present exactly when the sequence is predicted to be an AMP.
    pub activity: Option<Activity<F>>,
}

impl<F> Verdict<F> {
    pub fn is_amp(&self) -> bool {
        self.activity.is_some()
    }
}

/// Trains the binary stage on every record of `full` and the activity stage on `positives`.
pub fn train_pipeline<F: Scalar>(
    full: &Dataset,
    positives: &Dataset,
    features: &FeatureMatrix<F>,
    config: &PipelineConfig<F>,
) -> Result<PipelineModel<F>> {
    check_threshold(config.amp_threshold)?;
    for &t in &config.label_thresholds {
        check_threshold(t)?;
    }
    let l = positives.label_names.len();
    if config.label_thresholds.len() != l {
        return Err(Error::Dimension {
            expected: l,
            got: config.label_thresholds.len(),
        });
    }

    let amp_of: HashMap<&str, Option<bool>> = full.records.iter().map(|r| (r.id.as_str(), r.amp_label)).collect();
    for rec in &positives.records {
        if amp_of.get(rec.id.as_str()) == Some(&Some(false)) {
            return Err(Error::Inconsistent(format!(
                "'{}' is in the positive set but labeled non-AMP",
                rec.id
            )));
        }
    }

    let amp: Vec<bool> = full
        .records
        .iter()
        .map(|r| {
            r.amp_label
                .ok_or_else(|| Error::Inconsistent(format!("'{}' has no AMP label", r.id)))
        })
        .collect::<Result<_>>()?;
    let activity: Vec<Vec<bool>> = positives
        .records
        .iter()
        .map(|r| {
            r.activity_labels
                .clone()
                .filter(|v| v.len() == l)
                .ok_or_else(|| Error::Inconsistent(format!("'{}' lacks a {l}-label activity vector", r.id)))
        })
        .collect::<Result<_>>()?;

    let narrow = |m: Matrix<F>| -> Result<Matrix<F>> {
        match &config.subset {
            Some(idx) => m.select_cols(idx),
            None => Ok(m),
        }
    };
    let x_full = narrow(join(full, features)?)?;
    let x_pos = narrow(join(positives, features)?)?;

    let binary = train_cascade(&x_full, &LabelMatrix::binary_classes(&amp), &config.binary)?;
    let multilabel = train_cascade(&x_pos, &LabelMatrix::from_rows(&activity)?, &config.multilabel)?;

    Ok(PipelineModel {
        binary,
        multilabel,
        amp_threshold: config.amp_threshold,
        label_thresholds: config.label_thresholds.clone(),
        label_names: positives.label_names.clone(),
        features: FeatureSpec {
            source: features.source,
            input_dim: features.dim(),
            subset: config.subset.clone(),
        },
    })
}

impl<F: Scalar> PipelineModel<F> {
    pub fn binary(&self) -> &CascadeModel<F> {
        &self.binary
    }

    pub fn multilabel(&self) -> &CascadeModel<F> {
        &self.multilabel
    }

    pub fn amp_threshold(&self) -> F {
        self.amp_threshold
    }

    pub fn label_thresholds(&self) -> &[F] {
        &self.label_thresholds
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn features(&self) -> &FeatureSpec {
        &self.features
    }

    pub fn set_amp_threshold(&mut self, t: F) -> Result<()> {
        check_threshold(t)?;
        self.amp_threshold = t;
        Ok(())
    }

    pub fn set_label_threshold(&mut self, label: usize, t: F) -> Result<()> {
        check_threshold(t)?;
        let slot = self
            .label_thresholds
            .get_mut(label)
            .ok_or_else(|| Error::InvalidArgument(format!("no label {label}")))?;
        *slot = t;
        Ok(())
    }

    /// AMP probability of one input vector.
    pub fn amp_score(&self, x: &[F]) -> Result<F> {
        Ok(self.binary.predict(&self.features.narrow(x)?)?[AMP_COLUMN])
    }

    /// Activity probabilities of one input vector, ignoring the gate.
    pub fn activity_scores(&self, x: &[F]) -> Result<Vec<F>> {
        self.multilabel.predict(&self.features.narrow(x)?)
    }

    pub fn predict(&self, id: &str, x: &[F]) -> Result<Verdict<F>> {
        let narrowed = self.features.narrow(x)?;
        let amp_score = self.binary.predict(&narrowed)?[AMP_COLUMN];
        let activity = if amp_score >= self.amp_threshold {
            let scores = self.multilabel.predict(&narrowed)?;
            let labels = scores.iter().zip(&self.label_thresholds).map(|(s, t)| s >= t).collect();
            Some(Activity { scores, labels })
        } else {
            None
        };
        Ok(Verdict {
            id: id.to_string(),
            amp_score,
            activity,
        })
    }

    pub fn predict_batch(&self, ids: &[String], x: &Matrix<F>) -> Result<Vec<Verdict<F>>> {
        use rayon::prelude::*;
        if ids.len() != x.n_rows() {
            return Err(Error::Dimension {
                expected: x.n_rows(),
                got: ids.len(),
            });
        }
        (0..ids.len())
            .into_par_iter()
            .map(|i| self.predict(&ids[i], x.row(i)))
            .collect()
    }

    /// Predicts a batch and ranks the predicted AMPs per activity label.
    pub fn rank_candidates(&self, ids: &[String], x: &Matrix<F>) -> Result<(Vec<Verdict<F>>, Vec<LabelRanking<F>>)> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let verdicts = self.predict_batch(ids, x)?;
        let rankings = rank_verdicts(&verdicts, &self.label_names);
        Ok((verdicts, rankings))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedEntry<F> {
    pub id: String,
    pub score: F,
    /// 1-based.
    pub rank: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelRanking<F> {
    pub label: String,
    pub entries: Vec<RankedEntry<F>>,
}

/// For each activity label, the predicted AMPs by descending score; equal scores are ordered
/// by id.
pub fn rank_verdicts<F: Scalar>(verdicts: &[Verdict<F>], label_names: &[String]) -> Vec<LabelRanking<F>> {
    label_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mut scored: Vec<(&str, F)> = verdicts
                .iter()
                .filter_map(|v| v.activity.as_ref().map(|a| (v.id.as_str(), a.scores[j])))
                .collect();
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(b.0)));
            LabelRanking {
                label: name.clone(),
                entries: scored
                    .into_iter()
                    .enumerate()
                    .map(|(r, (id, score))| RankedEntry {
                        id: id.to_string(),
                        score,
                        rank: r + 1,
                    })
                    .collect(),
            }
        })
        .collect()
}

/// `id, is_amp, amp_score`, then one score and one label column per activity; gated-out
/// rows leave the activity cells empty.
pub fn verdicts_to_tsv<F: Scalar>(verdicts: &[Verdict<F>], label_names: &[String]) -> String {
    let mut out = String::from("id\tis_amp\tamp_score");
    for n in label_names {
        let _ = write!(out, "\tscore:{n}");
    }
    for n in label_names {
        let _ = write!(out, "\tlabel:{n}");
    }
    out.push('\n');
    for v in verdicts {
        let _ = write!(out, "{}\t{}\t{}", v.id, v.is_amp() as u8, v.amp_score);
        match &v.activity {
            Some(a) => {
                for s in &a.scores {
                    let _ = write!(out, "\t{s}");
                }
                for b in &a.labels {
                    let _ = write!(out, "\t{}", *b as u8);
                }
            }
            None => out.push_str(&"\t".repeat(2 * label_names.len())),
        }
        out.push('\n');
    }
    out
}

pub fn rankings_to_tsv<F: Scalar>(rankings: &[LabelRanking<F>]) -> String {
    let mut out = String::from("label\trank\tid\tscore\n");
    for r in rankings {
        for e in &r.entries {
            let _ = writeln!(out, "{}\t{}\t{}\t{}", r.label, e.rank, e.id, e.score);
        }
    }
    out
}
