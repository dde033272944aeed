//! Model families: one-vs-rest logistic regression and random forests, and
//! layered networks (FNN, CNN, simple RNN, LSTM, GRU) trained with early
//! stopping on binary cross-entropy.

mod data;
mod forest;
mod linear;
mod network;
mod parallel;
mod spec;
mod train;
mod trained;

pub use data::{Features, InputShape, LabeledFeatures};
pub use forest::{train_random_forest_ovr, DecisionTree, ForestOvr, ForestParams, Node, RandomForest};
pub use linear::{train_logreg_ovr, LogisticRegression, LogregOvr};
pub use network::Network;
pub use parallel::{parallel_map, worker_threads, THREADS_ENV};
pub use spec::{
    preset, preset_names, BaselineParams, InputKind, LayerSpec, ModelFamily, ModelSpec, TrainConfig,
};
pub use train::{fit, train_with_early_stopping, EpochRecord, StopSummary, Trainable};
pub use trained::{predict, ModelBody, TrainedModel};

use thiserror::Error;

use crate::neuralcore::NnError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model specification: {0}")]
    Spec(String),
    #[error("feature kind mismatch: {0}")]
    Input(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite { what: String, epoch: usize, batch: usize },
    #[error("empty feature matrix")]
    Empty,
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type ModelResult<T> = Result<T, ModelError>;
