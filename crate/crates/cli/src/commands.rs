use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::{info, warn};

use hmd_core::cascade::{train_cascade, CascadeConfig, ScanConfig};
use hmd_core::embed::{join, load_embeddings, one_hot_matrix};
use hmd_core::evalharness::{
    ablation_run, cross_validate, stratified_folds, subset_experiment, AblationConfig, ModelSpec, Task, Variant,
};
use hmd_core::explain::{global_weights, indices_to_text, parse_indices, select_top_k, FeatureStats};
use hmd_core::forest::{ForestConfig, ForestKind};
use hmd_core::hierarchy::{rankings_to_tsv, train_pipeline, verdicts_to_tsv, AMP_COLUMN};
use hmd_core::matrix::LabelMatrix;
use hmd_core::rng::derive_seed;
use hmd_core::seqio::{
    dataset_stats, deduplicate, labels_to_tsv, parse_fasta, parse_labels, write_fasta, Dataset, LabeledSequence,
    ACTIVITY_LABELS,
};
use hmd_core::store;
use hmd_core::{
    ExperimentReport, ExplainConfig, FeatureMatrix, GlobalWeights, Matrix, PipelineConfig, Real, StoredModel, TaskSpec,
};

use crate::args::*;
use crate::UsageError;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn label_names() -> Vec<String> {
    ACTIVITY_LABELS.iter().map(|s| s.to_string()).collect()
}

fn load_fasta_only(path: &Path) -> Result<Dataset> {
    let records = parse_fasta(&read(path)?).with_context(|| format!("parsing {}", path.display()))?;
    let mut d = Dataset::new(records.into_iter().map(|(id, r)| LabeledSequence::new(id, r)).collect());
    d.provenance = path.display().to_string();
    Ok(d)
}

fn load_sequences(args: &SequenceArgs) -> Result<Dataset> {
    let Some(labels) = &args.labels else {
        return load_fasta_only(&args.fasta);
    };
    let records = parse_fasta(&read(&args.fasta)?).with_context(|| format!("parsing {}", args.fasta.display()))?;
    let names = label_names();
    let table = parse_labels(&read(labels)?, &names).with_context(|| format!("parsing {}", labels.display()))?;
    let mut d = Dataset::from_parts(records, &table, &names)?;
    d.provenance = args.fasta.display().to_string();
    Ok(d)
}

fn load_labeled(args: &SequenceArgs) -> Result<Dataset> {
    if args.labels.is_none() {
        return Err(usage("--labels is required"));
    }
    load_sequences(args)
}

fn load_features(fa: &FeatureArgs, dataset: Option<&Dataset>) -> Result<FeatureMatrix> {
    match (&fa.embeddings, fa.onehot) {
        (Some(path), _) => load_embeddings(&read(path)?).with_context(|| format!("parsing {}", path.display())),
        (None, true) => {
            let d = dataset.ok_or_else(|| usage("--onehot needs --fasta"))?;
            Ok(one_hot_matrix(d, fa.max_len)?)
        }
        (None, false) => Err(usage("one of --embeddings or --onehot is required")),
    }
}

fn feature_subset(fa: &FeatureArgs) -> Result<Option<Vec<usize>>> {
    fa.feature_subset
        .as_ref()
        .map(|p| parse_indices(&read(p)?).with_context(|| format!("parsing {}", p.display())))
        .transpose()
}

fn project(features: FeatureMatrix, subset: &Option<Vec<usize>>) -> Result<FeatureMatrix> {
    match subset {
        Some(idx) => Ok(features.project(idx)?),
        None => Ok(features),
    }
}

fn cascade_config(c: &CascadeArgs, seed: u64) -> CascadeConfig {
    CascadeConfig {
        max_layers: c.max_layers,
        patience: c.patience,
        k_inner: c.k_inner,
        n_trees: c.trees,
        max_depth: c.max_depth,
        scan: (!c.no_scan).then_some(ScanConfig {
            window: c.window,
            stride: c.stride,
            n_trees: c.scan_trees,
        }),
        seed,
    }
}

fn check_threshold(t: f64, flag: &str) -> Result<f64> {
    if t > 0.0 && t <= 1.0 {
        Ok(t)
    } else {
        Err(usage(format!("{flag} {t} is outside (0, 1]")))
    }
}

/// One threshold per label, from a single shared value or a full list.
fn label_thresholds(t: &ThresholdArgs, l: usize) -> Result<Option<Vec<f64>>> {
    for &v in &t.label_thresholds {
        check_threshold(v, "--label-thresholds")?;
    }
    match t.label_thresholds.len() {
        0 => Ok(None),
        1 => Ok(Some(vec![t.label_thresholds[0]; l])),
        n if n == l => Ok(Some(t.label_thresholds.clone())),
        n => Err(usage(format!("--label-thresholds takes 1 or {l} values, got {n}"))),
    }
}

fn amp_truths(d: &Dataset) -> Vec<bool> {
    d.records.iter().map(|r| r.amp_label == Some(true)).collect()
}

fn activity_matrix(d: &Dataset) -> Result<LabelMatrix> {
    let rows: Vec<Vec<bool>> = d
        .records
        .iter()
        .map(|r| r.activity_labels.clone().unwrap_or_default())
        .collect();
    Ok(LabelMatrix::from_rows(&rows)?)
}

/// Rows to score: the FASTA order when one is given, otherwise every feature row.
fn rows_for(features: &FeatureMatrix, dataset: Option<&Dataset>) -> Result<(Vec<String>, Matrix)> {
    match dataset {
        Some(d) => Ok((
            d.records.iter().map(|r| r.id.clone()).collect(),
            join(d, features)?,
        )),
        None => Ok((features.ids.clone(), features.values.clone())),
    }
}

pub fn run(cli: &Cli, name: &str, snapshot: &str) -> Result<()> {
    write(&cli.out_dir.join(format!("{name}.config")), snapshot)?;
    match &cli.command {
        Command::Stats(a) => stats(cli, a),
        Command::Dedup(a) => dedup(a),
        Command::Train(a) => train(cli, a),
        Command::Predict(a) => predict(cli, a),
        Command::Cv(a) => cv(cli, a),
        Command::Subset(a) => subset(cli, a),
        Command::Ablation(a) => ablation(cli, a),
        Command::Explain(a) => explain(cli, a),
        Command::SelectFeatures(a) => select_features(cli, a),
    }
}

fn stats(cli: &Cli, a: &StatsArgs) -> Result<()> {
    let tsv = dataset_stats(&load_sequences(&a.seqs)?).to_tsv();
    print!("{tsv}");
    write(&cli.out_dir.join("stats.tsv"), tsv)
}

fn dedup(a: &DedupArgs) -> Result<()> {
    let d = load_sequences(&a.seqs)?;
    let (unique, removed) = deduplicate(&d)?;
    eprintln!("{} records kept, {removed} duplicate(s) removed", unique.len());
    write(
        &a.out,
        write_fasta(unique.records.iter().map(|r| (r.id.as_str(), r.residues.as_str())), 60),
    )?;
    if let Some(path) = &a.out_labels {
        write(path, labels_to_tsv(&unique))?;
    }
    Ok(())
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let d = load_labeled(&a.seqs)?;
    let subset = feature_subset(&a.features)?;
    let features = load_features(&a.features, Some(&d))?;
    let config = cascade_config(&a.cascade, cli.seed);
    config.validate().map_err(|e| usage(e.to_string()))?;
    let thresholds_given = a.thresholds.amp_threshold.is_some() || !a.thresholds.label_thresholds.is_empty();

    let model = match a.task {
        TrainTask::Binary | TrainTask::Multilabel => {
            if thresholds_given {
                warn!("thresholds only apply to pipeline models; ignored");
            }
            let features = project(features, &subset)?;
            let (data, y) = if a.task == TrainTask::Binary {
                let y = LabelMatrix::binary_classes(&amp_truths(&d));
                (d, y)
            } else {
                let pos = d.positives();
                let y = activity_matrix(&pos)?;
                (pos, y)
            };
            info!("training on {} records × {} features", data.len(), features.dim());
            let m = train_cascade(&join(&data, &features)?, &y, &config)?;
            write(&cli.out_dir.join("history.tsv"), m.history_tsv())?;
            StoredModel::Cascade(m)
        }
        TrainTask::Pipeline => {
            let mut pc = PipelineConfig::new(config, d.label_names.len());
            if let Some(t) = a.thresholds.amp_threshold {
                pc.amp_threshold = check_threshold(t, "--amp-threshold")?;
            }
            if let Some(t) = label_thresholds(&a.thresholds, d.label_names.len())? {
                pc.label_thresholds = t;
            }
            pc.subset = subset;
            let m = train_pipeline(&d, &d.positives(), &features, &pc)?;
            write(&cli.out_dir.join("history.binary.tsv"), m.binary().history_tsv())?;
            write(&cli.out_dir.join("history.multilabel.tsv"), m.multilabel().history_tsv())?;
            StoredModel::Pipeline(m)
        }
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    store::save(&model, &a.out).with_context(|| format!("saving {}", a.out.display()))?;
    eprintln!("model written to {}", a.out.display());
    Ok(())
}

fn score_header(n: usize) -> Vec<String> {
    match n {
        2 => vec!["non_amp".into(), "amp".into()],
        n if n == ACTIVITY_LABELS.len() => label_names(),
        n => (0..n).map(|j| format!("label_{j}")).collect(),
    }
}

fn scores_to_tsv(ids: &[String], scores: &Matrix) -> String {
    let mut out = String::from("id");
    for h in score_header(scores.n_cols()) {
        let _ = write!(out, "\t{h}");
    }
    out.push('\n');
    for (id, row) in ids.iter().zip(scores.rows_iter()) {
        out.push_str(id);
        for v in row {
            let _ = write!(out, "\t{v}");
        }
        out.push('\n');
    }
    out
}

fn predict(cli: &Cli, a: &PredictArgs) -> Result<()> {
    let model = store::load::<Real>(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let dataset = a.fasta.as_deref().map(load_fasta_only).transpose()?;
    let features = load_features(&a.features, dataset.as_ref())?;
    match model {
        StoredModel::Pipeline(mut p) => {
            if a.features.feature_subset.is_some() {
                return Err(usage("pipeline models carry their own feature subset; drop --feature-subset"));
            }
            if let Some(t) = a.thresholds.amp_threshold {
                p.set_amp_threshold(check_threshold(t, "--amp-threshold")?)?;
            }
            if let Some(t) = label_thresholds(&a.thresholds, p.label_names().len())? {
                for (j, v) in t.into_iter().enumerate() {
                    p.set_label_threshold(j, v)?;
                }
            }
            let (ids, x) = rows_for(&features, dataset.as_ref())?;
            let (verdicts, rankings) = p.rank_candidates(&ids, &x)?;
            let out = a.out.clone().unwrap_or_else(|| cli.out_dir.join("verdicts.tsv"));
            write(&out, verdicts_to_tsv(&verdicts, p.label_names()))?;
            write(&cli.out_dir.join("rankings.tsv"), rankings_to_tsv(&rankings))?;
            let n_amp = verdicts.iter().filter(|v| v.is_amp()).count();
            eprintln!("{} sequences scored, {n_amp} predicted AMP", verdicts.len());
        }
        StoredModel::Cascade(_) | StoredModel::Forest(_) => {
            let features = project(features, &feature_subset(&a.features)?)?;
            let (ids, x) = rows_for(&features, dataset.as_ref())?;
            let scores = match &model {
                StoredModel::Cascade(m) => m.predict_matrix(&x)?,
                StoredModel::Forest(f) => f.predict_matrix(&x)?,
                _ => unreachable!(),
            };
            let out = a.out.clone().unwrap_or_else(|| cli.out_dir.join("scores.tsv"));
            write(&out, scores_to_tsv(&ids, &scores))?;
        }
        StoredModel::GlobalWeights(_) => return Err(usage("that file holds feature weights, not a model")),
    }
    Ok(())
}

fn eval_task(t: EvalTask) -> Task {
    match t {
        EvalTask::Binary => Task::Binary,
        EvalTask::Multilabel => Task::Multilabel,
    }
}

fn task_data(d: &Dataset, task: Task) -> Dataset {
    match task {
        Task::Binary => d.clone(),
        Task::Multilabel => d.positives(),
    }
}

fn cv(cli: &Cli, a: &CvArgs) -> Result<()> {
    if a.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let d = load_labeled(&a.seqs)?;
    let features = project(load_features(&a.features, Some(&d))?, &feature_subset(&a.features)?)?;
    let task = eval_task(a.task);
    let data = task_data(&d, task);
    let model = match a.model {
        ModelChoice::Cascade => {
            let c = cascade_config(&a.cascade, cli.seed);
            c.validate().map_err(|e| usage(e.to_string()))?;
            ModelSpec::Cascade(c)
        }
        ModelChoice::RandomForest => ModelSpec::RandomForest(ForestConfig::new(ForestKind::Random, a.cascade.trees, cli.seed)),
    };
    let thresholds = match task {
        Task::Binary => a
            .thresholds
            .amp_threshold
            .map(|t| check_threshold(t, "--amp-threshold").map(|t| vec![t]))
            .transpose()?,
        Task::Multilabel => label_thresholds(&a.thresholds, data.label_names.len())?,
    };
    let spec = TaskSpec {
        task,
        model,
        thresholds,
    };
    let mut reports = Vec::with_capacity(a.trials);
    for t in 0..a.trials {
        let seed = if t == 0 { cli.seed } else { derive_seed(cli.seed, t as u64) };
        let plan = stratified_folds(&data, a.k, seed, task.stratify_mode())?;
        reports.push(cross_validate(&data, &features, &spec, &plan)?);
    }
    let report = ExperimentReport::merge(reports)?;
    write(&cli.out_dir.join("cv_report.tsv"), report.to_tsv())?;
    eprint!("{}", report.summary_text());
    Ok(())
}

fn subset(cli: &Cli, a: &SubsetArgs) -> Result<()> {
    if a.sizes.is_empty() {
        return Err(usage("--sizes needs at least one size"));
    }
    let d = load_labeled(&a.seqs)?;
    let features = project(load_features(&a.features, Some(&d))?, &feature_subset(&a.features)?)?;
    let config = cascade_config(&a.cascade, cli.seed);
    config.validate().map_err(|e| usage(e.to_string()))?;
    let spec = TaskSpec {
        task: Task::Multilabel,
        model: ModelSpec::Cascade(config),
        thresholds: None,
    };
    for (size, report) in subset_experiment(&d.positives(), &features, &spec, &a.sizes, a.k, cli.seed)? {
        write(&cli.out_dir.join(format!("subset_{size}.tsv")), report.to_tsv())?;
        eprintln!("== subset of {size}");
        eprint!("{}", report.summary_text());
    }
    Ok(())
}

fn ablation(cli: &Cli, a: &AblationArgs) -> Result<()> {
    let variants = a
        .variants
        .iter()
        .map(|v| Variant::parse(v).ok_or_else(|| usage(format!("unknown variant '{v}'"))))
        .collect::<Result<Vec<_>>>()?;
    if a.embeddings.is_none() {
        if let Some(v) = variants.iter().find(|v| **v != Variant::DeepForestOneHot) {
            return Err(usage(format!("variant {} needs --embeddings", v.name())));
        }
    }
    let d = load_labeled(&a.seqs)?;
    let embeddings = a
        .embeddings
        .as_ref()
        .map(|p| load_embeddings::<Real>(&read(p)?).with_context(|| format!("parsing {}", p.display())))
        .transpose()?;
    let task = eval_task(a.task);
    let data = task_data(&d, task);
    let config = AblationConfig {
        task,
        cascade: cascade_config(&a.cascade, cli.seed),
        forest_trees: a.forest_trees,
        max_len: a.max_len,
    };
    config.cascade.validate().map_err(|e| usage(e.to_string()))?;
    let plan = stratified_folds(&data, a.k, cli.seed, task.stratify_mode())?;
    for v in variants {
        let report = ablation_run(&data, embeddings.as_ref(), v, &config, &plan)?;
        write(&cli.out_dir.join(format!("ablation_{}.tsv", v.name())), report.to_tsv())?;
        eprintln!("== {}", v.name());
        eprint!("{}", report.summary_text());
    }
    Ok(())
}

type ScoreFn = Box<dyn Fn(&[Real]) -> Real + Sync>;

fn resolve_column(target: &str, n_labels: usize, names: &[String]) -> Result<usize> {
    if let Some(j) = names.iter().position(|n| n == target) {
        return Ok(j);
    }
    match target.parse::<usize>() {
        Ok(j) if j < n_labels => Ok(j),
        _ => Err(usage(format!("unknown --target '{target}'"))),
    }
}

/// Scalar output explained by `explain`, plus the width of its input vectors.
fn score_function(model: StoredModel, target: &str) -> Result<(ScoreFn, usize)> {
    let column = |n: usize| -> Result<usize> {
        if target == "amp" {
            return if n == 2 {
                Ok(AMP_COLUMN)
            } else {
                Err(usage("--target amp needs a binary model"))
            };
        }
        let names = if n == ACTIVITY_LABELS.len() { label_names() } else { Vec::new() };
        resolve_column(target, n, &names)
    };
    Ok(match model {
        StoredModel::Pipeline(p) => {
            let dim = p.features().input_dim;
            if target == "amp" {
                (Box::new(move |x: &[Real]| p.amp_score(x).expect("width checked")), dim)
            } else {
                let j = resolve_column(target, p.label_names().len(), p.label_names())?;
                (Box::new(move |x: &[Real]| p.activity_scores(x).expect("width checked")[j]), dim)
            }
        }
        StoredModel::Cascade(m) => {
            let j = column(m.n_labels())?;
            let dim = m.input_dim();
            (Box::new(move |x: &[Real]| m.predict(x).expect("width checked")[j]), dim)
        }
        StoredModel::Forest(f) => {
            let j = column(f.n_labels())?;
            let dim = f.n_features();
            (Box::new(move |x: &[Real]| f.predict(x).expect("width checked")[j]), dim)
        }
        StoredModel::GlobalWeights(_) => return Err(usage("that file holds feature weights, not a model")),
    })
}

fn explain(cli: &Cli, a: &ExplainArgs) -> Result<()> {
    let model = store::load::<Real>(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    if matches!(model, StoredModel::Pipeline(_)) && a.features.feature_subset.is_some() {
        return Err(usage("pipeline models carry their own feature subset; drop --feature-subset"));
    }
    let dataset = a.fasta.as_deref().map(load_fasta_only).transpose()?;
    let features = project(load_features(&a.features, dataset.as_ref())?, &feature_subset(&a.features)?)?;
    let (_, x) = rows_for(&features, dataset.as_ref())?;
    let (score, dim) = score_function(model, &a.target)?;
    if x.n_cols() != dim {
        anyhow::bail!("features have {} columns but the model expects {dim}", x.n_cols());
    }
    if x.n_rows() == 0 {
        anyhow::bail!("no rows to explain");
    }
    let n = if a.instances == 0 { x.n_rows() } else { a.instances.min(x.n_rows()) };
    let picked: Vec<usize> = (0..n).map(|i| i * x.n_rows() / n).collect();
    let stats = FeatureStats::from_matrix(&x)?;
    let config = ExplainConfig {
        n_samples: a.samples,
        kernel_width: a.kernel_width,
        ridge: a.ridge,
        seed: cli.seed,
    };
    info!("explaining {n} instances with {} samples each", a.samples);
    let g = global_weights(&*score, &x.select_rows(&picked), &stats, &config)?;
    write(&cli.out_dir.join("global_weights.tsv"), g.to_tsv())?;
    store::save(&StoredModel::GlobalWeights(g), &cli.out_dir.join("global_weights.hmdf"))?;
    Ok(())
}

fn select_features(cli: &Cli, a: &SelectArgs) -> Result<()> {
    if a.k == 0 {
        return Err(usage("--k must be positive"));
    }
    let bytes = fs::read(&a.weights).with_context(|| format!("reading {}", a.weights.display()))?;
    let g = if bytes.starts_with(&store::MAGIC) {
        store::from_bytes::<Real>(&bytes)?.into_global_weights()?
    } else {
        GlobalWeights::from_tsv(std::str::from_utf8(&bytes).context("weights file is not UTF-8")?)?
    };
    let idx = select_top_k(&g, a.k, a.abs)?;
    let out: PathBuf = a.out.clone().unwrap_or_else(|| cli.out_dir.join("selected_features.txt"));
    write(&out, indices_to_text(&idx))
}
