#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use clorder::corpus::{load_dataset, QueryRecord, TokenEstimator};
use clorder::ordering::Strategy;
use clorder::pipeline::{write_trace, ChainConfig, MockBackend, Timing};
use clorder::similarity::{Embedder, EmbeddingBackend, LocalHashEmbedder};
use clorder::workflow::{run_queries, QueryOutcome, RunSettings, SimilaritySource};

/// Words per section in the bundled fixtures; chunking at this limit
/// recovers the sections exactly.
pub const SECTION_WORDS: usize = 12;
pub const MC_MOCK_CAPACITY: usize = 3;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn load(name: &str) -> Vec<QueryRecord> {
    load_dataset(&fixture(name)).expect("fixture parses")
}

pub fn local_embedder() -> Embedder {
    Embedder::new(Arc::new(LocalHashEmbedder::default()) as Arc<dyn EmbeddingBackend>)
}

pub fn mock_chain() -> ChainConfig {
    ChainConfig {
        per_chunk_token_limit: SECTION_WORDS,
        estimator: TokenEstimator::WhitespaceWords,
        timing: Timing::Frozen,
        ..ChainConfig::default()
    }
}

/// Runs `records` under `strategies` with the mock backend and local hash
/// embeddings.
pub fn mock_run(records: &[QueryRecord], strategies: &[Strategy], capacity: usize) -> Vec<QueryOutcome> {
    let embedder = local_embedder();
    let chain = mock_chain();
    let settings = RunSettings {
        strategies,
        chain: &chain,
        seed: 7,
        parallel: 4,
    };
    run_queries(
        records,
        &SimilaritySource::Dense(&embedder),
        &MockBackend::new(capacity),
        &settings,
    )
    .expect("pool builds")
}

/// All traces of a run, concatenated in outcome order.
pub fn trace_bytes(outcomes: &[QueryOutcome]) -> Vec<u8> {
    let mut buf = Vec::new();
    for o in outcomes {
        let r = o.result.as_ref().expect("query succeeded");
        write_trace(&mut buf, r).unwrap();
    }
    buf
}
