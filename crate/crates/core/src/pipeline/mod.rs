//! Sequential worker/manager chains over an ordered chunk list.

mod backend;
mod mock;
mod prompts;
mod truncate;

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use backend::{BackendLimits, GenerationBackend, GenerationFailure, GenerationParams, HttpGenerationBackend};
pub use mock::{parse_facts, Fact, MockBackend, UNKNOWN_ANSWER};
pub use prompts::{
    render_manager_prompt, render_template, render_worker_prompt, DEFAULT_TASK_INSTRUCTION, MANAGER_TEMPLATE,
    WORKER_TEMPLATE,
};
pub use truncate::truncate_to_budget;

use crate::corpus::{estimate_tokens, Chunk, TokenEstimator};
use crate::ordering::{is_permutation, Strategy};

pub const DEFAULT_PER_CHUNK_TOKEN_LIMIT: usize = 8000;
pub const DEFAULT_SUMMARY_TOKEN_LIMIT: usize = 8000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryState {
    pub step_index: usize,
    pub summary_text: String,
    pub token_count: usize,
}

impl MemoryState {
    pub fn empty() -> Self {
        Self {
            step_index: 0,
            summary_text: String::new(),
            token_count: 0,
        }
    }
}

/// How step latency is reported. `Frozen` reports 0 so traces are
/// byte-identical across runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Timing {
    #[default]
    Wall,
    Frozen,
}

impl Timing {
    fn measure<T>(self, f: impl FnOnce() -> T) -> (T, u64) {
        let start = Instant::now();
        let out = f();
        let ms = match self {
            Timing::Wall => start.elapsed().as_millis() as u64,
            Timing::Frozen => 0,
        };
        (out, ms)
    }
}

#[derive(Debug, Clone)]
pub struct ChainConfig {
    pub per_chunk_token_limit: usize,
    pub summary_token_limit: usize,
    pub params: GenerationParams,
    pub estimator: TokenEstimator,
    pub task_instruction: Option<String>,
    pub timing: Timing,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            per_chunk_token_limit: DEFAULT_PER_CHUNK_TOKEN_LIMIT,
            summary_token_limit: DEFAULT_SUMMARY_TOKEN_LIMIT,
            params: GenerationParams::default(),
            estimator: TokenEstimator::WhitespaceWords,
            task_instruction: None,
            timing: Timing::Wall,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub chunk_id: String,
    pub prompt_tokens: usize,
    pub response_tokens: usize,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub query_id: String,
    pub strategy: Strategy,
    pub answer: String,
    /// `N + 1` states, starting with the empty memory.
    pub trace: Vec<MemoryState>,
    /// One entry per worker step.
    pub steps: Vec<StepStats>,
    pub manager_latency_ms: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("step {step}: chunk {chunk_id} has {tokens} tokens, over the per-chunk limit of {limit}")]
    ChunkTooLong {
        step: usize,
        chunk_id: String,
        tokens: usize,
        limit: usize,
    },
    #[error("step {step}: backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable {
        step: usize,
        attempts: usize,
        message: String,
        partial_trace: Vec<MemoryState>,
    },
    #[error("order is not a permutation of {n} chunks")]
    InvalidOrdering { n: usize },
}

impl PipelineError {
    pub fn partial_trace(&self) -> &[MemoryState] {
        match self {
            PipelineError::BackendUnavailable { partial_trace, .. } => partial_trace,
            _ => &[],
        }
    }
}

/// One worker call: reads the chunk and the previous memory, writes the next.
pub fn worker_step(
    backend: &dyn GenerationBackend,
    query: &str,
    chunk: &Chunk,
    memory: &MemoryState,
    cfg: &ChainConfig,
) -> Result<(MemoryState, StepStats), PipelineError> {
    let step = memory.step_index + 1;
    let tokens = estimate_tokens(&chunk.text, &cfg.estimator);
    if tokens > cfg.per_chunk_token_limit {
        return Err(PipelineError::ChunkTooLong {
            step,
            chunk_id: chunk.chunk_id.clone(),
            tokens,
            limit: cfg.per_chunk_token_limit,
        });
    }
    let prompt = render_worker_prompt(&chunk.text, &memory.summary_text, query);
    let (out, latency_ms) = cfg.timing.measure(|| backend.generate(&prompt, &cfg.params));
    let out = out.map_err(|e| PipelineError::BackendUnavailable {
        step,
        attempts: e.attempts,
        message: e.message,
        partial_trace: Vec::new(),
    })?;
    let summary = truncate_to_budget(&out, cfg.summary_token_limit, &cfg.estimator).to_owned();
    let state = MemoryState {
        step_index: step,
        token_count: estimate_tokens(&summary, &cfg.estimator),
        summary_text: summary,
    };
    let stats = StepStats {
        chunk_id: chunk.chunk_id.clone(),
        prompt_tokens: estimate_tokens(&prompt, &cfg.estimator),
        response_tokens: estimate_tokens(&out, &cfg.estimator),
        latency_ms,
    };
    Ok((state, stats))
}

/// The final answer, trimmed.
pub fn manager_step(
    backend: &dyn GenerationBackend,
    query: &str,
    memory: &MemoryState,
    cfg: &ChainConfig,
) -> Result<(String, u64), GenerationFailure> {
    let prompt = render_manager_prompt(&memory.summary_text, query, cfg.task_instruction.as_deref());
    let (out, ms) = cfg.timing.measure(|| backend.generate(&prompt, &cfg.params));
    Ok((out?.trim().to_owned(), ms))
}

/// What one chain runs over.
#[derive(Debug, Clone, Copy)]
pub struct ChainInput<'a> {
    pub query_id: &'a str,
    pub query: &'a str,
    pub chunks: &'a [Chunk],
    pub order: &'a [usize],
    pub strategy: Strategy,
}

/// Runs every worker in `order`, then the manager. Any failure aborts the
/// chain; no chunk is skipped.
pub fn run_chain(
    backend: &dyn GenerationBackend,
    input: ChainInput<'_>,
    cfg: &ChainConfig,
) -> Result<PipelineResult, PipelineError> {
    let n = input.chunks.len();
    if !is_permutation(input.order, n) {
        return Err(PipelineError::InvalidOrdering { n });
    }
    let mut trace = vec![MemoryState::empty()];
    let mut steps = Vec::with_capacity(n);
    for &idx in input.order {
        let memory = trace.last().expect("trace starts non-empty");
        match worker_step(backend, input.query, &input.chunks[idx], memory, cfg) {
            Ok((state, stats)) => {
                trace.push(state);
                steps.push(stats);
            }
            Err(PipelineError::BackendUnavailable {
                step,
                attempts,
                message,
                ..
            }) => {
                return Err(PipelineError::BackendUnavailable {
                    step,
                    attempts,
                    message,
                    partial_trace: trace,
                })
            }
            Err(e) => return Err(e),
        }
    }
    let last = trace.last().expect("trace starts non-empty");
    let (answer, manager_latency_ms) =
        manager_step(backend, input.query, last, cfg).map_err(|e| PipelineError::BackendUnavailable {
            step: n + 1,
            attempts: e.attempts,
            message: e.message,
            partial_trace: trace.clone(),
        })?;
    Ok(PipelineResult {
        query_id: input.query_id.to_owned(),
        strategy: input.strategy,
        answer,
        trace,
        steps,
        manager_latency_ms,
    })
}

#[derive(Serialize)]
struct TraceStepLine<'a> {
    query_id: &'a str,
    step: usize,
    chunk_id: &'a str,
    summary: &'a str,
    summary_tokens: usize,
    latency_ms: u64,
}

#[derive(Serialize)]
struct TraceAnswerLine<'a> {
    query_id: &'a str,
    answer: &'a str,
}

/// One JSON line per worker step, then `{"query_id","answer"}`.
pub fn write_trace<W: Write>(mut out: W, result: &PipelineResult) -> std::io::Result<()> {
    for (state, stats) in result.trace.iter().skip(1).zip(&result.steps) {
        let line = TraceStepLine {
            query_id: &result.query_id,
            step: state.step_index,
            chunk_id: &stats.chunk_id,
            summary: &state.summary_text,
            summary_tokens: state.token_count,
            latency_ms: stats.latency_ms,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    serde_json::to_writer(
        &mut out,
        &TraceAnswerLine {
            query_id: &result.query_id,
            answer: &result.answer,
        },
    )?;
    out.write_all(b"\n")
}
