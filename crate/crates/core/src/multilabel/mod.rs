//! One-vs-rest multi-label topic classification over comment embeddings.

use thiserror::Error;

use crate::boost::BoostError;

pub mod eval;
pub mod folds;
pub mod model;
pub mod search;

pub use eval::{evaluate, micro_f1, EvalReport, LabelMetrics, MicroMetrics};
pub use folds::{stratified_kfold, FoldAssignment};
pub use model::{
    fit_corpus, predict_labels, retrain, train_ovr, LabelHead, OneVsRestModel, ParamsSpec,
    Prediction, TrainingMetadata, DEFAULT_THRESHOLD,
};
pub use search::{
    cross_validated_probabilities, grid_search, nested_cv_predictions, scorable_labels,
    tune_thresholds, CellScore, ParamGrid, SearchResult,
};

#[derive(Debug, Error, PartialEq)]
pub enum MultilabelError {
    #[error("k = {k} folds is invalid for {n} examples")]
    InvalidK { k: usize, n: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("label `{0}` is not in the taxonomy")]
    UnknownLabel(String),
    #[error("embedding dimension mismatch: model expects {expected}, got {got}")]
    EmbeddingMismatch { expected: usize, got: usize },
    #[error("embedding fingerprint mismatch: model has {model}, caller has {caller}")]
    FingerprintMismatch { model: String, caller: String },
    #[error("threshold {0} not in [0, 1)")]
    InvalidThreshold(f64),
    #[error("parameter grid has no cells")]
    EmptyGrid,
    #[error("no training examples")]
    NoTrainingData,
    #[error(transparent)]
    Boost(#[from] BoostError),
    #[error("{0}")]
    Io(String),
    #[error("malformed model bundle: {0}")]
    Format(String),
}
