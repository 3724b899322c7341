//! Binary good/bad image-quality classifier over handcrafted features:
//! logistic regression and random forests, grid search on the F2 score and
//! exact Shapley attributions.

use std::path::PathBuf;

use thiserror::Error;

pub mod dataset;
pub mod evaluate;
pub mod forest;
pub mod logistic;
pub mod model;
pub mod search;
pub mod shapley;

pub use dataset::{read_features_csv, split_dataset, write_features_csv, FeatureRow, FeatureTable, Standardizer};
pub use evaluate::{evaluate, EvalReport};
pub use forest::{train_forest, ForestOptions, Node, Tree};
pub use logistic::{fit_logistic, train_logistic, LogisticFit, LogisticOptions};
pub use model::{ClassifierModel, ModelKind, ModelParams, MODEL_VERSION};
pub use search::{default_forest_grid, default_logistic_grid, grid_search, CvRow, ModelSpec, SearchResult};
pub use shapley::{
    explain_shapley, render_explanations, shapley_values, Contribution, ExplanationSummary,
    FeatureImportance, InstanceListing, ShapExplanation,
    MAX_SHAPLEY_FEATURES,
};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("{0} rows but {1} labels")]
    LengthMismatch(usize, usize),
    #[error("non-finite value in row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("feature schema mismatch: model expects {expected:?}, got {found:?}")]
    SchemaMismatch { expected: Vec<String>, found: Vec<String> },
    #[error("expected {expected} feature values, got {found}")]
    WrongArity { expected: usize, found: usize },
    #[error("{0} features is too many for exact Shapley values (max {MAX_SHAPLEY_FEATURES}); subsample the features")]
    TooManyFeatures(usize),
    #[error("background set is empty")]
    EmptyBackground,
    #[error("parameter grid is empty")]
    EmptyGrid,
    #[error("class {label} has {count} member(s); stratification needs at least 2")]
    Stratify { label: &'static str, count: usize },
    #[error("image {0} has no quality label")]
    Unlabeled(String),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("malformed model: {0}")]
    InvalidModel(String),
    #[error("feature table {path}: {detail}")]
    Table { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn label_name(good: bool) -> &'static str {
    if good {
        "good"
    } else {
        "bad"
    }
}

/// Rejects empty, ragged or non-finite design matrices.
pub(crate) fn check_matrix(x: &[Vec<f64>], y: &[bool]) -> Result<usize, ClassifierError> {
    if x.is_empty() {
        return Err(ClassifierError::EmptyTrainingSet);
    }
    if x.len() != y.len() {
        return Err(ClassifierError::LengthMismatch(x.len(), y.len()));
    }
    let d = x[0].len();
    for (row, r) in x.iter().enumerate() {
        if r.len() != d {
            return Err(ClassifierError::WrongArity { expected: d, found: r.len() });
        }
        if let Some(col) = r.iter().position(|v| !v.is_finite()) {
            return Err(ClassifierError::NonFinite { row, col });
        }
    }
    Ok(d)
}

/// Per-class sample weights `n / (2·n_class)`, or all ones.
pub(crate) fn class_weights(y: &[bool], balanced: bool) -> (f64, f64) {
    if !balanced {
        return (1.0, 1.0);
    }
    let n = y.len() as f64;
    let pos = y.iter().filter(|&&g| g).count() as f64;
    let neg = n - pos;
    let w = |c: f64| if c > 0.0 { n / (2.0 * c) } else { 1.0 };
    (w(neg), w(pos))
}

pub const BACKGROUND_ROWS: usize = 100;

/// Up to [`BACKGROUND_ROWS`] training rows drawn with the seed, kept in their
/// original order.
pub(crate) fn sample_background(x: &[Vec<f64>], seed: u64) -> Vec<Vec<f64>> {
    use rand::seq::index::sample;
    use rand::SeedableRng;
    if x.len() <= BACKGROUND_ROWS {
        return x.to_vec();
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, x.len(), BACKGROUND_ROWS).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| x[i].clone()).collect()
}
