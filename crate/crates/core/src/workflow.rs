//! Query-level plumbing shared by the CLI and the end-to-end tests:
//! chunk a record, score chunk relatedness, plan orders and run chains.

use rayon::prelude::*;

use crate::corpus::{split_into_chunks, Chunk, CorpusError, QueryRecord, TokenEstimator};
use crate::eval::{score, EvalRecord};
use crate::ordering::{plan_ordering, Ordering, OrderingError, Strategy};
use crate::pipeline::{
    run_chain, ChainConfig, ChainInput, GenerationBackend, MemoryState, PipelineError, PipelineResult,
};
use crate::similarity::{
    bm25_query_scores, bm25_symmetric_texts, build_similarity_matrix, query_similarity, Bm25Params, Embedder,
    MatrixFile, SimilarityError, SimilarityMatrix, Symmetrization,
};

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Ordering(#[from] OrderingError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("matrix file covers {matrix} chunks but the document has {chunks}")]
    MatrixSize { matrix: usize, chunks: usize },
    #[error("thread pool: {0}")]
    Pool(String),
}

/// Where chunk-to-chunk and query-to-chunk scores come from.
pub enum SimilaritySource<'a> {
    Dense(&'a Embedder),
    Bm25 {
        params: Bm25Params,
        mode: Symmetrization,
    },
    /// Precomputed; query scores default to all zero, rooting at chunk 0.
    Matrix(&'a MatrixFile),
}

#[derive(Debug, Clone)]
pub struct PreparedQuery {
    pub chunks: Vec<Chunk>,
    pub matrix: SimilarityMatrix,
    pub query_scores: Vec<f64>,
}

pub fn chunk_record(record: &QueryRecord, limit: usize, estimator: &TokenEstimator) -> Result<Vec<Chunk>, CorpusError> {
    split_into_chunks(&record.query_id, &record.context, limit, estimator)
}

pub fn score_chunks(
    chunks: &[Chunk],
    query: &str,
    source: &SimilaritySource<'_>,
) -> Result<(SimilarityMatrix, Vec<f64>), WorkflowError> {
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    match source {
        SimilaritySource::Dense(embedder) => {
            let vectors = embedder.embed_texts(&texts)?;
            let q = embedder.embed_one(query)?;
            Ok((build_similarity_matrix(&vectors)?, query_similarity(&q, &vectors)?))
        }
        SimilaritySource::Bm25 { params, mode } => Ok((
            bm25_symmetric_texts(&texts, *params, *mode),
            bm25_query_scores(query, &texts, *params),
        )),
        SimilaritySource::Matrix(file) => {
            let matrix = file.into_matrix()?;
            if matrix.n() != chunks.len() {
                return Err(WorkflowError::MatrixSize {
                    matrix: matrix.n(),
                    chunks: chunks.len(),
                });
            }
            let scores = file.query_scores.clone().unwrap_or_else(|| vec![0.0; chunks.len()]);
            Ok((matrix, scores))
        }
    }
}

pub fn prepare_query(
    record: &QueryRecord,
    limit: usize,
    estimator: &TokenEstimator,
    source: &SimilaritySource<'_>,
) -> Result<PreparedQuery, WorkflowError> {
    let chunks = chunk_record(record, limit, estimator)?;
    let (matrix, query_scores) = score_chunks(&chunks, &record.query_text, source)?;
    Ok(PreparedQuery {
        chunks,
        matrix,
        query_scores,
    })
}

/// The question as the chain sees it; choices are listed as `(A) ...` lines.
pub fn chain_question(record: &QueryRecord) -> String {
    let mut q = record.query_text.clone();
    if let Some(choices) = &record.choices {
        for (i, c) in choices.iter().enumerate() {
            let letter = char::from(b'A' + (i % 26) as u8);
            q.push_str(&format!("\n({letter}) {c}"));
        }
    }
    q
}

/// Seed for the random baseline of the `index`-th query.
pub fn query_seed(base: u64, index: usize) -> u64 {
    base.wrapping_add(index as u64)
}

/// Broad failure category; the CLI maps it to an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    Config,
    Backend,
    Data,
}

impl WorkflowError {
    pub fn kind(&self) -> FailureKind {
        match self {
            WorkflowError::Similarity(
                SimilarityError::BackendUnavailable { .. } | SimilarityError::DimensionDrift { .. },
            )
            | WorkflowError::Pipeline(PipelineError::BackendUnavailable { .. }) => FailureKind::Backend,
            WorkflowError::Pool(_) => FailureKind::Config,
            _ => FailureKind::Data,
        }
    }
}

/// A per-query failure, kept alongside the successful outcomes.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{message}")]
pub struct QueryFailure {
    pub kind: FailureKind,
    pub message: String,
    pub partial_trace: Vec<MemoryState>,
}

impl From<WorkflowError> for QueryFailure {
    fn from(e: WorkflowError) -> Self {
        let partial_trace = match &e {
            WorkflowError::Pipeline(p) => p.partial_trace().to_vec(),
            _ => Vec::new(),
        };
        Self {
            kind: e.kind(),
            message: e.to_string(),
            partial_trace,
        }
    }
}

#[derive(Debug)]
pub struct QueryOutcome {
    pub query_id: String,
    pub strategy: Strategy,
    pub ordering: Option<Ordering>,
    pub result: Result<PipelineResult, QueryFailure>,
}

impl QueryOutcome {
    pub fn eval(&self, record: &QueryRecord) -> Option<EvalRecord> {
        self.result
            .as_ref()
            .ok()
            .map(|r| score(record, self.strategy, &r.answer))
    }
}

pub struct RunSettings<'a> {
    pub strategies: &'a [Strategy],
    pub chain: &'a ChainConfig,
    pub seed: u64,
    /// Queries processed concurrently; 0 lets the pool decide.
    pub parallel: usize,
}

fn run_one(
    index: usize,
    record: &QueryRecord,
    source: &SimilaritySource<'_>,
    backend: &dyn GenerationBackend,
    settings: &RunSettings<'_>,
) -> Vec<QueryOutcome> {
    let outcome = |strategy, ordering, result| QueryOutcome {
        query_id: record.query_id.clone(),
        strategy,
        ordering,
        result,
    };
    let prepared = match prepare_query(
        record,
        settings.chain.per_chunk_token_limit,
        &settings.chain.estimator,
        source,
    ) {
        Ok(p) => p,
        Err(e) => {
            let failure = QueryFailure::from(e);
            return settings
                .strategies
                .iter()
                .map(|&s| outcome(s, None, Err(failure.clone())))
                .collect();
        }
    };
    let question = chain_question(record);
    settings
        .strategies
        .iter()
        .map(|&strategy| {
            let seed = query_seed(settings.seed, index);
            let ordering = match plan_ordering(strategy, &prepared.matrix, &prepared.query_scores, seed) {
                Ok(o) => o,
                Err(e) => return outcome(strategy, None, Err(WorkflowError::from(e).into())),
            };
            let input = ChainInput {
                query_id: &record.query_id,
                query: &question,
                chunks: &prepared.chunks,
                order: &ordering.order,
                strategy,
            };
            let result = run_chain(backend, input, settings.chain).map_err(|e| WorkflowError::from(e).into());
            outcome(strategy, Some(ordering), result)
        })
        .collect()
}

/// Runs every record under every strategy. Outcomes come back in dataset
/// order, strategies in the order given.
pub fn run_queries(
    records: &[QueryRecord],
    source: &SimilaritySource<'_>,
    backend: &dyn GenerationBackend,
    settings: &RunSettings<'_>,
) -> Result<Vec<QueryOutcome>, WorkflowError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.parallel)
        .build()
        .map_err(|e| WorkflowError::Pool(e.to_string()))?;
    let nested: Vec<Vec<QueryOutcome>> = pool.install(|| {
        records
            .par_iter()
            .enumerate()
            .map(|(i, r)| run_one(i, r, source, backend, settings))
            .collect()
    });
    Ok(nested.into_iter().flatten().collect())
}
