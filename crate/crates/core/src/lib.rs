//! Multi-label ICD-9 coding of discharge summaries.
//!
//! The pipeline runs `corpus` → `textproc` → `features` → `models` →
//! `metrics`, with `harness` tying the stages to a config file and a run
//! directory. The numerical core lives in `neuralcore`.

pub mod corpus;
pub mod features;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod neuralcore;
pub mod scalar;
pub mod textproc;

pub use scalar::Scalar;

pub type Tensor64 = neuralcore::Tensor<f64>;
pub type Tensor32 = neuralcore::Tensor<f32>;
pub type EmbeddingMatrix64 = features::EmbeddingMatrix<f64>;
pub type EmbeddingMatrix32 = features::EmbeddingMatrix<f32>;
pub type Network64 = models::Network<f64>;
pub type Network32 = models::Network<f32>;
pub type TrainedModel64 = models::TrainedModel<f64>;
pub type TrainedModel32 = models::TrainedModel<f32>;
