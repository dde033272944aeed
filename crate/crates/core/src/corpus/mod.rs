//! MIMIC-III-shaped input: note and diagnosis CSVs, discharge-summary
//! filtering, label catalogs, sanitization, labeled datasets, splits and
//! the synthetic corpus generator.

mod dataset;
mod labels;
mod mimic;
mod synth;

pub use dataset::{
    build_dataset, read_catalog, read_dataset_dir, read_split_file, split_dataset, write_dataset_dir, BuildStats, DatasetManifest,
    Example, LabeledDataset, SplitSpec,
};
pub use labels::{
    code_to_category, dotted_form, sanitize_note, select_top_labels, validate_code, LabelCatalog, LabelMode,
};
pub use mimic::{
    filter_discharge_summaries, load_diagnoses, load_noteevents, write_diagnoses_csv, write_noteevents_csv,
    DiagnosisReader, DiagnosisRecord, Note, NoteReader, DISCHARGE_CATEGORY,
};
pub use synth::{generate_synthetic_corpus, order_rule_labels, SynthSpec, SyntheticCorpus, NEGATION};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{file}: missing required column {column}")]
    Schema { file: String, column: &'static str },
    #[error("{file}: record {row}: {msg}")]
    Record { file: String, row: u64, msg: String },
    #[error("invalid ICD-9 code {0:?}")]
    InvalidCode(String),
    #[error("only {found} distinct labels, {k} requested")]
    InsufficientLabels { k: usize, found: usize },
    #[error("no admission carries a catalog label")]
    EmptyDataset,
    #[error("dataset of {0} examples is too small to split")]
    TooSmall(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type CorpusResult<T> = Result<T, CorpusError>;
