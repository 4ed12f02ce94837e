//! Stratified k-fold cross-validation, small-sample subset experiments and ablation runs.

use std::fmt::Write as _;
use std::time::Instant;

use log::{info, warn};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::cascade::{train_cascade, CascadeConfig, CascadeModel};
use crate::embed::{join, one_hot_matrix, FeatureMatrix, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::forest::{Forest, ForestConfig, ForestKind, DEFAULT_TREES};
use crate::hierarchy::AMP_COLUMN;
use crate::matrix::{LabelMatrix, Matrix};
use crate::metrics::{evaluate, fmt_fixed, fmt_opt, MetricsReport};
use crate::rng::{derive_seed, rng_from};
use crate::scalar::Scalar;
use crate::seqio::Dataset;

pub const DEFAULT_FOLDS: usize = 5;
pub const SUBSET_SIZES: [usize; 3] = [50, 100, 200];
pub const MAX_SUBSET_ATTEMPTS: usize = 1000;

const FOLD_SEED_TAG: u64 = 0xC0FF;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StratifyMode {
    Binary,
    IterativeMultilabel,
}

impl StratifyMode {
    pub fn name(self) -> &'static str {
        match self {
            StratifyMode::Binary => "binary",
            StratifyMode::IterativeMultilabel => "iterative-multilabel",
        }
    }
}

/// `k` disjoint folds of dataset positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
    pub ids: Vec<Vec<String>>,
    pub seed: u64,
    pub mode: StratifyMode,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.folds.len()
    }

    pub fn n(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    /// Positions outside fold `f`, ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, fold)| fold.iter().copied())
            .collect();
        idx.sort_unstable();
        idx
    }

    fn check_against(&self, dataset: &Dataset) -> Result<()> {
        let mut seen = vec![false; dataset.len()];
        for (fold, ids) in self.folds.iter().zip(&self.ids) {
            for (&i, id) in fold.iter().zip(ids) {
                if i >= dataset.len() || seen[i] || dataset.records[i].id != *id {
                    return Err(Error::Inconsistent("fold plan does not match the dataset".into()));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Inconsistent("fold plan does not cover the dataset".into()));
        }
        Ok(())
    }
}

fn amp_labels(dataset: &Dataset) -> Result<Vec<bool>> {
    dataset
        .records
        .iter()
        .map(|r| {
            r.amp_label
                .ok_or_else(|| Error::Inconsistent(format!("'{}' has no AMP label", r.id)))
        })
        .collect()
}

fn activity_labels(dataset: &Dataset) -> Result<LabelMatrix> {
    let l = dataset.label_names.len();
    let rows: Vec<Vec<bool>> = dataset
        .records
        .iter()
        .map(|r| {
            r.activity_labels
                .clone()
                .filter(|v| v.len() == l)
                .ok_or_else(|| Error::Inconsistent(format!("'{}' lacks a {l}-label activity vector", r.id)))
        })
        .collect::<Result<_>>()?;
    LabelMatrix::from_rows(&rows)
}

/// Splits `dataset` into `k` stratified folds.
///
/// Binary mode shuffles each AMP stratum and deals it round-robin, continuing from the fold
/// where the previous stratum stopped. Multi-label mode runs greedy iterative stratification:
/// the unassigned examples of the label with the fewest remaining positives go, one by one,
/// to the fold that still needs the most of that label (ties: fewest examples so far, then
/// lowest index). Examples without positives fill the folds with the largest remaining size.
pub fn stratified_folds(dataset: &Dataset, k: usize, seed: u64, mode: StratifyMode) -> Result<FoldPlan> {
    let n = dataset.len();
    if k < 2 {
        return Err(Error::InvalidArgument("k must be at least 2".into()));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds {n} records")));
    }
    let mut rng = rng_from(derive_seed(seed, FOLD_SEED_TAG));
    let mut folds = vec![Vec::new(); k];
    match mode {
        StratifyMode::Binary => {
            let amp = amp_labels(dataset)?;
            let mut next = 0;
            for stratum in [true, false] {
                let mut idx: Vec<usize> = (0..n).filter(|&i| amp[i] == stratum).collect();
                idx.shuffle(&mut rng);
                for i in idx {
                    folds[next].push(i);
                    next = (next + 1) % k;
                }
            }
        }
        StratifyMode::IterativeMultilabel => {
            let y = activity_labels(dataset)?;
            iterative_stratification(&y, k, &mut rng, &mut folds);
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    let ids = folds
        .iter()
        .map(|f| f.iter().map(|&i| dataset.records[i].id.clone()).collect())
        .collect();
    Ok(FoldPlan { folds, ids, seed, mode })
}

struct Needs<'a> {
    y: &'a LabelMatrix,
    size: Vec<f64>,
    label: Vec<Vec<f64>>,
    remaining: Vec<usize>,
}

impl Needs<'_> {
    /// Fold with the largest `need(f)`; ties go to the fold with fewer examples, then the
    /// lower index.
    fn pick(folds: &[Vec<usize>], need: impl Fn(usize) -> f64) -> usize {
        (0..folds.len())
            .max_by(|&a, &b| {
                need(a)
                    .total_cmp(&need(b))
                    .then(folds[b].len().cmp(&folds[a].len()))
                    .then(b.cmp(&a))
            })
            .expect("at least one fold")
    }

    fn place(&mut self, i: usize, f: usize, folds: &mut [Vec<usize>]) {
        folds[f].push(i);
        self.size[f] -= 1.0;
        for j in 0..self.y.n_labels() {
            if self.y.get(i, j) {
                self.label[f][j] -= 1.0;
                self.remaining[j] -= 1;
            }
        }
    }
}

fn iterative_stratification(y: &LabelMatrix, k: usize, rng: &mut crate::rng::Rng, folds: &mut [Vec<usize>]) {
    let (n, l) = (y.n_rows(), y.n_labels());
    let kf = k as f64;
    let mut needs = Needs {
        y,
        size: vec![n as f64 / kf; k],
        label: (0..k)
            .map(|_| (0..l).map(|j| y.positives(j) as f64 / kf).collect())
            .collect(),
        remaining: (0..l).map(|j| y.positives(j)).collect(),
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut assigned = vec![false; n];

    while let Some(j) = (0..l)
        .filter(|&j| needs.remaining[j] > 0)
        .min_by_key(|&j| (needs.remaining[j], j))
    {
        for &i in &order {
            if assigned[i] || !y.get(i, j) {
                continue;
            }
            let f = Needs::pick(folds, |f| needs.label[f][j]);
            assigned[i] = true;
            needs.place(i, f, folds);
        }
    }
    for &i in &order {
        if !assigned[i] {
            let f = Needs::pick(folds, |f| needs.size[f]);
            assigned[i] = true;
            needs.place(i, f, folds);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// AMP vs non-AMP over every record.
    Binary,
    /// Activity labels over records that carry them.
    Multilabel,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Binary => "binary",
            Task::Multilabel => "multilabel",
        }
    }

    pub fn stratify_mode(self) -> StratifyMode {
        match self {
            Task::Binary => StratifyMode::Binary,
            Task::Multilabel => StratifyMode::IterativeMultilabel,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    Cascade(CascadeConfig),
    /// A single forest; its seed is replaced per fold.
    RandomForest(ForestConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec<F> {
    pub task: Task,
    pub model: ModelSpec,
    /// One per evaluated column; `None` means 0.5 everywhere.
    pub thresholds: Option<Vec<F>>,
}

impl<F: Scalar> TaskSpec<F> {
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "task={}", self.task.name());
        match &self.model {
            ModelSpec::Cascade(c) => {
                out.push_str("model=cascade\n");
                out.push_str(&c.to_kv());
            }
            ModelSpec::RandomForest(c) => {
                out.push_str("model=random-forest\n");
                let _ = writeln!(out, "trees={}", c.n_trees);
                let _ = writeln!(out, "seed={}", c.seed);
            }
        }
        if let Some(t) = &self.thresholds {
            let t: Vec<String> = t.iter().map(ToString::to_string).collect();
            let _ = writeln!(out, "thresholds={}", t.join(","));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FoldResult<F> {
    pub trial: usize,
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub report: MetricsReport<F>,
    /// Cascade levels grown and the selected level, for cascade models.
    pub levels: Option<usize>,
    pub best_layer: Option<usize>,
}

/// Mean and sample standard deviation of one metric over the folds that define it.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricSummary<F> {
    pub name: &'static str,
    pub mean: Option<F>,
    pub std: Option<F>,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport<F> {
    pub label_names: Vec<String>,
    pub folds: Vec<FoldResult<F>>,
    pub summary: Vec<MetricSummary<F>>,
    pub config: String,
    pub wall_clock_secs: f64,
}

fn summarize<F: Scalar>(folds: &[FoldResult<F>]) -> Vec<MetricSummary<F>> {
    let Some(first) = folds.first() else {
        return Vec::new();
    };
    let names: Vec<&'static str> = first.report.headline().iter().map(|(n, _)| *n).collect();
    names
        .iter()
        .enumerate()
        .map(|(m, &name)| {
            let values: Vec<F> = folds.iter().filter_map(|f| f.report.headline()[m].1).collect();
            let n = values.len();
            let mean = (n > 0).then(|| values.iter().copied().sum::<F>() / F::from_usize_lossy(n));
            let std = mean.map(|mu| {
                if n < 2 {
                    F::zero()
                } else {
                    let ss: F = values.iter().map(|&v| (v - mu) * (v - mu)).sum();
                    (ss / F::from_usize_lossy(n - 1)).sqrt()
                }
            });
            MetricSummary { name, mean, std, n }
        })
        .collect()
}

impl<F: Scalar> ExperimentReport<F> {
    pub fn new(label_names: Vec<String>, folds: Vec<FoldResult<F>>, config: String, wall_clock_secs: f64) -> Self {
        let summary = summarize(&folds);
        Self {
            label_names,
            folds,
            summary,
            config,
            wall_clock_secs,
        }
    }

    pub fn metric(&self, name: &str) -> Option<&MetricSummary<F>> {
        self.summary.iter().find(|s| s.name == name)
    }

    /// Pools the folds of repeated trials; trial indices follow the input order.
    pub fn merge(reports: Vec<Self>) -> Result<Self> {
        let Some(first) = reports.first() else {
            return Err(Error::InvalidArgument("nothing to merge".into()));
        };
        let label_names = first.label_names.clone();
        let config = first.config.clone();
        let mut wall = 0.0;
        let mut folds = Vec::new();
        for (t, r) in reports.into_iter().enumerate() {
            if r.label_names != label_names {
                return Err(Error::Inconsistent("merged reports disagree on labels".into()));
            }
            wall += r.wall_clock_secs;
            folds.extend(r.folds.into_iter().map(|f| FoldResult { trial: t, ..f }));
        }
        Ok(Self::new(label_names, folds, config, wall))
    }

    /// Config snapshot as `#` lines, one row per fold, then `mean` and `std` rows.
    /// Wall-clock time is left out so that reruns are byte-identical.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for line in self.config.lines() {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("trial\tfold\tn_train\tn_test\tlevels\tbest_layer");
        for s in &self.summary {
            let _ = write!(out, "\t{}", s.name);
        }
        out.push('\n');
        let opt = |v: Option<usize>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        for f in &self.folds {
            let _ = write!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                f.trial + 1,
                f.fold + 1,
                f.n_train,
                f.n_test,
                opt(f.levels),
                opt(f.best_layer)
            );
            for (_, v) in f.report.headline() {
                let _ = write!(out, "\t{}", fmt_opt(v));
            }
            out.push('\n');
        }
        for (row, pick) in [("mean", true), ("std", false)] {
            let _ = write!(out, "{row}\t\t\t\t\t");
            for s in &self.summary {
                let _ = write!(out, "\t{}", fmt_opt(if pick { s.mean } else { s.std }));
            }
            out.push('\n');
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let mut out = String::new();
        let trials = self.folds.iter().map(|f| f.trial).max().map_or(0, |t| t + 1);
        let _ = writeln!(
            out,
            "{} folds over {} trial(s), {:.1} s",
            self.folds.len(),
            trials,
            self.wall_clock_secs
        );
        for s in &self.summary {
            let _ = writeln!(
                out,
                "{:<20} {} ± {}  (n={})",
                s.name,
                fmt_fixed(s.mean),
                fmt_fixed(s.std),
                s.n
            );
        }
        out.push_str("config:\n");
        for line in self.config.lines() {
            let _ = writeln!(out, "  {line}");
        }
        out
    }
}

enum Fitted<F> {
    Cascade(Box<CascadeModel<F>>),
    Forest(Forest<F>),
}

impl<F: Scalar> Fitted<F> {
    fn predict(&self, x: &Matrix<F>) -> Result<Matrix<F>> {
        match self {
            Fitted::Cascade(m) => m.predict_matrix(x),
            Fitted::Forest(f) => f.predict_matrix(x),
        }
    }
}

fn fit_model<F: Scalar>(x: &Matrix<F>, y: &LabelMatrix, model: &ModelSpec, seed: u64) -> Result<Fitted<F>> {
    match model {
        ModelSpec::Cascade(c) => {
            let cfg = CascadeConfig { seed, ..c.clone() };
            Ok(Fitted::Cascade(Box::new(train_cascade(x, y, &cfg)?)))
        }
        ModelSpec::RandomForest(c) => Ok(Fitted::Forest(Forest::fit(x, y, &c.with_seed(seed))?)),
    }
}

/// Trains on every fold but one and evaluates on the held-out fold, for each fold of `plan`.
/// Fold `f` trains with seed `derive_seed(plan.seed, f + 1)`.
pub fn cross_validate<F: Scalar>(
    dataset: &Dataset,
    features: &FeatureMatrix<F>,
    spec: &TaskSpec<F>,
    plan: &FoldPlan,
) -> Result<ExperimentReport<F>> {
    let start = Instant::now();
    plan.check_against(dataset)?;
    let x = join(dataset, features)?;
    let (y, eval_cols, label_names) = match spec.task {
        Task::Binary => (
            LabelMatrix::binary_classes(&amp_labels(dataset)?),
            vec![AMP_COLUMN],
            vec!["AMP".to_string()],
        ),
        Task::Multilabel => {
            let y = activity_labels(dataset)?;
            let cols = (0..y.n_labels()).collect();
            (y, cols, dataset.label_names.clone())
        }
    };
    let half = F::from_f64_lossy(0.5);
    let thresholds = spec.thresholds.clone().unwrap_or_else(|| vec![half; eval_cols.len()]);
    if thresholds.len() != eval_cols.len() {
        return Err(Error::Dimension {
            expected: eval_cols.len(),
            got: thresholds.len(),
        });
    }

    let folds: Vec<FoldResult<F>> = (0..plan.k())
        .into_par_iter()
        .map(|f| {
            let test = &plan.folds[f];
            let train = plan.train_indices(f);
            let model = fit_model(
                &x.select_rows(&train),
                &y.select_rows(&train),
                &spec.model,
                derive_seed(plan.seed, f as u64 + 1),
            )?;
            let scores = model.predict(&x.select_rows(test))?.select_cols(&eval_cols)?;
            let truths = y.select_rows(test).select_cols(&eval_cols);
            let report = evaluate(&scores, &truths, &thresholds)?;
            if report.macro_auc.is_none() {
                warn!("fold {} has no scorable label; skipped from macro-AUC", f + 1);
            }
            let (levels, best_layer) = match &model {
                Fitted::Cascade(m) => (Some(m.levels().len()), Some(m.best_layer())),
                Fitted::Forest(_) => (None, None),
            };
            info!("fold {}/{} done", f + 1, plan.k());
            Ok(FoldResult {
                trial: 0,
                fold: f,
                n_train: train.len(),
                n_test: test.len(),
                report,
                levels,
                best_layer,
            })
        })
        .collect::<Result<_>>()?;

    let mut config = spec.snapshot();
    let _ = writeln!(config, "k={}", plan.k());
    let _ = writeln!(config, "fold_seed={}", plan.seed);
    let _ = writeln!(config, "stratify={}", plan.mode.name());
    Ok(ExperimentReport::new(
        label_names,
        folds,
        config,
        start.elapsed().as_secs_f64(),
    ))
}

/// Draws `size` records (bounded retries) so that every label has a positive and a negative,
/// returning the positions in ascending order.
pub fn coverage_subset(dataset: &Dataset, size: usize, seed: u64) -> Result<Vec<usize>> {
    let y = activity_labels(dataset)?;
    let (n, l) = (y.n_rows(), y.n_labels());
    let name = |j: usize| dataset.label_names.get(j).cloned().unwrap_or_else(|| j.to_string());
    if size > n {
        return Err(Error::InvalidArgument(format!("subset size {size} exceeds {n} records")));
    }
    for j in 0..l {
        let p = y.positives(j);
        if p == 0 || p == n {
            return Err(Error::Coverage { label: name(j), size });
        }
    }
    let mut rng = rng_from(derive_seed(seed, size as u64));
    let mut failures = vec![0usize; l];
    for attempt in 0..MAX_SUBSET_ATTEMPTS {
        let mut idx = sample(&mut rng, n, size).into_vec();
        idx.sort_unstable();
        let missing: Vec<usize> = (0..l)
            .filter(|&j| {
                let p = idx.iter().filter(|&&i| y.get(i, j)).count();
                p == 0 || p == size
            })
            .collect();
        if missing.is_empty() {
            info!("subset of {size} covered after {} attempt(s)", attempt + 1);
            return Ok(idx);
        }
        for j in missing {
            failures[j] += 1;
        }
    }
    let worst = (0..l).max_by_key(|&j| (failures[j], std::cmp::Reverse(j))).unwrap_or(0);
    Err(Error::Coverage {
        label: name(worst),
        size,
    })
}

/// Multi-label cross-validation on coverage-constrained subsets of each size.
pub fn subset_experiment<F: Scalar>(
    dataset: &Dataset,
    features: &FeatureMatrix<F>,
    spec: &TaskSpec<F>,
    sizes: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<(usize, ExperimentReport<F>)>> {
    if spec.task != Task::Multilabel {
        return Err(Error::InvalidArgument("subset experiments use the multi-label task".into()));
    }
    sizes
        .iter()
        .map(|&size| {
            let idx = coverage_subset(dataset, size, seed)?;
            let subset = dataset.subset(&idx);
            let plan = stratified_folds(&subset, k, seed, StratifyMode::IterativeMultilabel)?;
            let mut report = cross_validate(&subset, features, spec, &plan)?;
            let _ = writeln!(report.config, "subset_size={size}");
            Ok((size, report))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Embeddings into the cascade.
    Hmd,
    /// One-hot residues into the cascade.
    DeepForestOneHot,
    /// Embeddings into a single random forest.
    RandomForestEmbed,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Hmd, Variant::DeepForestOneHot, Variant::RandomForestEmbed];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Hmd => "hmd",
            Variant::DeepForestOneHot => "deep-forest-onehot",
            Variant::RandomForestEmbed => "random-forest-embed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationConfig {
    pub task: Task,
    pub cascade: CascadeConfig,
    pub forest_trees: usize,
    pub max_len: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            task: Task::Multilabel,
            cascade: CascadeConfig::default(),
            forest_trees: DEFAULT_TREES,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

/// Cross-validates one ablation variant on `plan`. Embedding variants need `embeddings`.
pub fn ablation_run<F: Scalar>(
    dataset: &Dataset,
    embeddings: Option<&FeatureMatrix<F>>,
    variant: Variant,
    config: &AblationConfig,
    plan: &FoldPlan,
) -> Result<ExperimentReport<F>> {
    let need_embeddings = || {
        embeddings.ok_or_else(|| Error::InvalidArgument(format!("variant {} needs an embedding file", variant.name())))
    };
    let onehot;
    let (features, model) = match variant {
        Variant::Hmd => (need_embeddings()?, ModelSpec::Cascade(config.cascade.clone())),
        Variant::DeepForestOneHot => {
            onehot = one_hot_matrix(dataset, config.max_len)?;
            (&onehot, ModelSpec::Cascade(config.cascade.clone()))
        }
        Variant::RandomForestEmbed => (
            need_embeddings()?,
            ModelSpec::RandomForest(ForestConfig::new(ForestKind::Random, config.forest_trees, 0)),
        ),
    };
    let spec = TaskSpec {
        task: config.task,
        model,
        thresholds: None,
    };
    let mut report = cross_validate(dataset, features, &spec, plan)?;
    report.config = format!("variant={}\n{}", variant.name(), report.config);
    Ok(report)
}
