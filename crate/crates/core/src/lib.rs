//! Hierarchical multi-label deep forest toolkit for antimicrobial peptide prediction.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix
//! the scalar to `f64`, which is what the command-line tool and the model files use.

pub mod cascade;
pub mod embed;
pub mod error;
pub mod evalharness;
pub mod explain;
pub mod forest;
pub mod hierarchy;
pub mod matrix;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod seqio;
pub mod store;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Real = f64;
pub type Matrix = matrix::Matrix<Real>;
pub type FeatureMatrix = embed::FeatureMatrix<Real>;
pub type Forest = forest::Forest<Real>;
pub type CascadeModel = cascade::CascadeModel<Real>;
pub type PipelineModel = hierarchy::PipelineModel<Real>;
pub type PipelineConfig = hierarchy::PipelineConfig<Real>;
pub type Verdict = hierarchy::Verdict<Real>;
pub type MetricsReport = metrics::MetricsReport<Real>;
pub type ExperimentReport = evalharness::ExperimentReport<Real>;
pub type TaskSpec = evalharness::TaskSpec<Real>;
pub type GlobalWeights = explain::GlobalWeights<Real>;
pub type ExplainConfig = explain::ExplainConfig<Real>;
pub type StoredModel = store::StoredModel<Real>;
