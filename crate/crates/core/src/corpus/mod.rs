//! Query ingestion, token estimation and document chunking.

mod chunker;
mod dataset;
mod tokens;

use std::path::PathBuf;

use thiserror::Error;

pub use chunker::{split_into_chunks, write_chunk_dump, Chunk};
pub use dataset::{load_dataset, parse_record, read_dataset, QueryRecord, RecordFault};
pub use tokens::{estimate_tokens, EstimatorMode, TokenEstimator, TokenEstimatorConfig, VocabularyTable};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("chunk limit must be positive")]
    InvalidLimit,
    #[error("document `{doc_id}` is empty")]
    EmptyText { doc_id: String },
    #[error(
        "document `{doc_id}`: whitespace-free run of {run_bytes} bytes at offset {byte_offset} \
         exceeds the chunk limit; lower the granularity or switch estimator mode"
    )]
    TextUnsplittable {
        doc_id: String,
        byte_offset: usize,
        run_bytes: usize,
    },
    #[error("line {line}: field `{field}`: {fault}")]
    MalformedRecord {
        line: usize,
        field: String,
        fault: RecordFault,
    },
    #[error("{0}")]
    Config(String),
    #[error("reading dataset: {0}")]
    Read(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
