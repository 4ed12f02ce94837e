use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "hmd",
    version,
    about = "Hierarchical multi-label deep forest for antimicrobial peptide prediction",
    after_help = "Every subcommand writes <out-dir>/<subcommand>.config, a key=value snapshot of the \
                  effective settings that can be passed back through --config.\n\
                  Exit status: 0 success, 1 usage error, 2 data error."
)]
pub struct Cli {
    /// key=value settings file; keys are long flag names, command-line flags win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads, 0 for one per core
    #[arg(long, global = true, env = "HMD_THREADS", default_value_t = 0)]
    pub threads: usize,

    /// Master seed; all randomness derives from it
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Directory for reports, histories and the config snapshot
    #[arg(long, global = true, value_name = "DIR", default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Record counts, positives per label and label cardinality.
    ///
    /// Outputs: <out-dir>/stats.tsv (also printed to stdout).
    Stats(StatsArgs),
    /// Collapse identical sequences, OR-merging their activity labels.
    ///
    /// Outputs: the FASTA given by --out and, with --labels, the label table given by
    /// --out-labels.
    Dedup(DedupArgs),
    /// Train a binary cascade, a multi-label cascade or the two-level pipeline.
    ///
    /// Outputs: the model file given by --out; <out-dir>/history.tsv with the per-level
    /// training measure (history.binary.tsv and history.multilabel.tsv for pipelines).
    Train(TrainArgs),
    /// Score sequences with a saved model.
    ///
    /// Outputs: pipeline models write the verdict table (--out, default
    /// <out-dir>/verdicts.tsv) and <out-dir>/rankings.tsv; cascades and forests write a score
    /// table (--out, default <out-dir>/scores.tsv).
    Predict(PredictArgs),
    /// Stratified k-fold cross-validation.
    ///
    /// Outputs: <out-dir>/cv_report.tsv; a summary goes to stderr.
    Cv(CvArgs),
    /// Cross-validation on small coverage-constrained samples of the positive set.
    ///
    /// Outputs: <out-dir>/subset_<size>.tsv per size.
    Subset(SubsetArgs),
    /// Compare the full method with one-hot and single-forest variants on one fold plan.
    ///
    /// Outputs: <out-dir>/ablation_<variant>.tsv per variant.
    Ablation(AblationArgs),
    /// Global feature weights from local surrogate explanations of a saved model.
    ///
    /// Outputs: <out-dir>/global_weights.tsv and <out-dir>/global_weights.hmdf.
    Explain(ExplainArgs),
    /// Top-k features by global weight, for retraining with --feature-subset.
    ///
    /// Outputs: one index per line in --out (default <out-dir>/selected_features.txt).
    SelectFeatures(SelectArgs),
}

#[derive(Args, Debug)]
pub struct SequenceArgs {
    /// Sequences in FASTA format
    #[arg(long, value_name = "FILE")]
    pub fasta: PathBuf,

    /// Activity table: header `id` plus the 11 activity names, then 0/1 rows; listed ids are AMPs
    #[arg(long, value_name = "FILE")]
    pub labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FeatureArgs {
    /// Per-sequence embeddings: `#dim d` header optional, then `id v1 ... vd` rows
    #[arg(long, value_name = "FILE", conflicts_with = "onehot")]
    pub embeddings: Option<PathBuf>,

    /// Use one-hot residue encoding instead of embeddings
    #[arg(long)]
    pub onehot: bool,

    /// Residues encoded by --onehot (longer sequences are truncated, shorter ones padded)
    #[arg(long, default_value_t = 200)]
    pub max_len: usize,

    /// Keep only the feature indices listed in this file (one per line)
    #[arg(long, value_name = "FILE")]
    pub feature_subset: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CascadeArgs {
    /// Maximum cascade levels
    #[arg(long, default_value_t = 20)]
    pub max_layers: usize,

    /// Levels without improvement before growth stops
    #[arg(long, default_value_t = 3)]
    pub patience: usize,

    /// Inner folds for out-of-fold class vectors
    #[arg(long, default_value_t = 3)]
    pub k_inner: usize,

    /// Trees per cascade forest (also the forest size of --model random-forest)
    #[arg(long, default_value_t = 1000)]
    pub trees: usize,

    /// Depth limit for every tree
    #[arg(long)]
    pub max_depth: Option<usize>,

    /// Feed raw features to the cascade without multi-grained scanning
    #[arg(long)]
    pub no_scan: bool,

    /// Scanning window width
    #[arg(long, default_value_t = 100)]
    pub window: usize,

    /// Scanning stride
    #[arg(long, default_value_t = 1)]
    pub stride: usize,

    /// Trees per scanning forest
    #[arg(long, default_value_t = 100)]
    pub scan_trees: usize,
}

#[derive(Args, Debug)]
pub struct ThresholdArgs {
    /// AMP decision threshold in (0, 1]; sequences scoring at least this are AMPs
    #[arg(long)]
    pub amp_threshold: Option<f64>,

    /// Activity thresholds in (0, 1]: one value for all labels or one per label, comma separated
    #[arg(long, value_delimiter = ',')]
    pub label_thresholds: Vec<f64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum TrainTask {
    Binary,
    Multilabel,
    Pipeline,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalTask {
    Binary,
    Multilabel,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Cascade,
    RandomForest,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[command(flatten)]
    pub seqs: SequenceArgs,
}

#[derive(Args, Debug)]
pub struct DedupArgs {
    #[command(flatten)]
    pub seqs: SequenceArgs,

    /// Deduplicated FASTA
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,

    /// Merged label table (requires --labels)
    #[arg(long, value_name = "FILE", requires = "labels")]
    pub out_labels: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// What to train
    #[arg(long, value_enum)]
    pub task: TrainTask,

    #[command(flatten)]
    pub seqs: SequenceArgs,

    #[command(flatten)]
    pub features: FeatureArgs,

    #[command(flatten)]
    pub cascade: CascadeArgs,

    #[command(flatten)]
    pub thresholds: ThresholdArgs,

    /// Model file to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Model file written by `train`
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,

    /// Sequences to score; required with --onehot, otherwise restricts and orders the embedding rows
    #[arg(long, value_name = "FILE")]
    pub fasta: Option<PathBuf>,

    #[command(flatten)]
    pub features: FeatureArgs,

    #[command(flatten)]
    pub thresholds: ThresholdArgs,

    /// Verdict or score table to write
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CvArgs {
    /// Binary AMP task over all records or multi-label task over the positives
    #[arg(long, value_enum)]
    pub task: EvalTask,

    /// Number of folds
    #[arg(long, default_value_t = 5)]
    pub k: usize,

    /// Repetitions with derived seeds, pooled into one report
    #[arg(long, default_value_t = 1)]
    pub trials: usize,

    /// Model evaluated in each fold
    #[arg(long, value_enum, default_value_t = ModelChoice::Cascade)]
    pub model: ModelChoice,

    #[command(flatten)]
    pub seqs: SequenceArgs,

    #[command(flatten)]
    pub features: FeatureArgs,

    #[command(flatten)]
    pub cascade: CascadeArgs,

    #[command(flatten)]
    pub thresholds: ThresholdArgs,
}

#[derive(Args, Debug)]
pub struct SubsetArgs {
    /// Subset sizes drawn from the positive set
    #[arg(long, value_delimiter = ',', default_values_t = [50, 100, 200])]
    pub sizes: Vec<usize>,

    /// Number of folds
    #[arg(long, default_value_t = 5)]
    pub k: usize,

    #[command(flatten)]
    pub seqs: SequenceArgs,

    #[command(flatten)]
    pub features: FeatureArgs,

    #[command(flatten)]
    pub cascade: CascadeArgs,
}

#[derive(Args, Debug)]
pub struct AblationArgs {
    /// Variants to run: hmd, deep-forest-onehot, random-forest-embed
    #[arg(long, value_delimiter = ',', default_values_t = ["hmd".to_string(), "deep-forest-onehot".to_string(), "random-forest-embed".to_string()])]
    pub variants: Vec<String>,

    /// Task evaluated by every variant
    #[arg(long, value_enum, default_value_t = EvalTask::Multilabel)]
    pub task: EvalTask,

    /// Number of folds
    #[arg(long, default_value_t = 5)]
    pub k: usize,

    /// Trees in the random-forest-embed forest
    #[arg(long, default_value_t = 1000)]
    pub forest_trees: usize,

    /// Per-sequence embeddings (needed by hmd and random-forest-embed)
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,

    /// Residues encoded by deep-forest-onehot
    #[arg(long, default_value_t = 200)]
    pub max_len: usize,

    #[command(flatten)]
    pub seqs: SequenceArgs,

    #[command(flatten)]
    pub cascade: CascadeArgs,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    /// Model file written by `train`
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,

    /// Restrict and order the explained sequences (required with --onehot)
    #[arg(long, value_name = "FILE")]
    pub fasta: Option<PathBuf>,

    #[command(flatten)]
    pub features: FeatureArgs,

    /// Explained output: `amp`, an activity name, or a column index
    #[arg(long, default_value = "amp")]
    pub target: String,

    /// Instances explained, spread evenly over the rows; 0 for all
    #[arg(long, default_value_t = 100)]
    pub instances: usize,

    /// Perturbed samples per instance
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,

    /// Proximity kernel width (default 0.75·√d)
    #[arg(long)]
    pub kernel_width: Option<f64>,

    /// Ridge damping of the surrogate fit
    #[arg(long, default_value_t = 1e-3)]
    pub ridge: f64,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    /// Global weights, as written by `explain` (.tsv or .hmdf)
    #[arg(long, value_name = "FILE")]
    pub weights: PathBuf,

    /// Number of features kept
    #[arg(long, default_value_t = 48)]
    pub k: usize,

    /// Rank by absolute weight instead of signed weight
    #[arg(long)]
    pub abs: bool,

    /// Index file to write
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}
