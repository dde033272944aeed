//! Config-driven experiment runner: prepare → featurize → train → evaluate
//! → report, with per-stage caches under an output directory.

mod compare;
mod config;
mod pipeline;

pub use compare::{compare_runs, ComparisonRow, ComparisonTable};
pub use config::{
    parse_key_values, parse_ratio, DataSource, DatasetConfig, EmbeddingChoice, ExperimentConfig, FeatureConfig,
    ScalarKind, StopwordPolicy, SynthTask, Track,
};
pub use pipeline::{
    evaluate, featurize, prepare, report, run_pipeline, synthesize, train, RunOutcome, RunRecord, StageOutput,
};

use std::fmt;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::features::FeatureError;
use crate::metrics::MetricsError;
use crate::models::ModelError;
use crate::neuralcore::NnError;
use crate::textproc::TextError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Prepare,
    Featurize,
    Train,
    Evaluate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Prepare => "prepare",
            Stage::Featurize => "featurize",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("runs come from different datasets: {0} vs {1}")]
    DatasetMismatch(String, String),
    #[error("cache entry {path} belongs to {found}, not {wanted}")]
    CacheKey { path: String, found: String, wanted: String },
    #[error("{0}")]
    Missing(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// The stage a failure came from, if it was raised inside one.
    pub fn stage(&self) -> Option<Stage> {
        match self {
            HarnessError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub type HarnessResult<T> = Result<T, HarnessError>;

pub(crate) fn in_stage<T>(stage: Stage, r: HarnessResult<T>) -> HarnessResult<T> {
    r.map_err(|e| match e {
        e @ HarnessError::Stage { .. } => e,
        e => HarnessError::Stage {
            stage,
            source: Box::new(e),
        },
    })
}
