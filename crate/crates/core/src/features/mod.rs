//! Feature tracks: sparse tfidf rows, averaged word vectors, and
//! front-padded token-index sequences backed by an embedding matrix.

mod cbow;
mod embedding;
mod io;
mod tfidf;

pub use cbow::{context_window, loss_trend_ok, train_word2vec_cbow, CbowConfig, CbowReport};
pub use embedding::{
    average_embedding, average_embedding_matrix, encode_word_sequence, load_pretrained_embeddings,
    read_word2vec_text, write_word2vec_text, EmbeddingMatrix, EmbeddingSource, PretrainedLoad, SequenceExample,
};
pub use io::{read_dense, read_sequences, read_sparse, write_dense, write_sequences, write_sparse};
pub use tfidf::{
    build_tfidf_vocabulary, compute_idf, select_tfidf_config, tfidf_matrix, tfidf_vectorize, IdfTable, TfidfConfig,
    TfidfParams,
};

use thiserror::Error;

use crate::textproc::TextError;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("unknown tfidf configuration {0:?}")]
    UnknownConfig(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("embedding file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("vocabulary is empty after min-count filtering")]
    EmptyVocabulary,
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type FeatureResult<T> = Result<T, FeatureError>;
