use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::cache::EmbeddingCache;
use super::http::HttpEmbeddingBackend;
use super::{terms, EmbeddingVector, SimilarityError};
use crate::corpus::Chunk;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendFailure {
    pub message: String,
}

impl BackendFailure {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

impl std::fmt::Display for BackendFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

/// Something that turns a batch of texts into vectors of a fixed dimension.
pub trait EmbeddingBackend: Send + Sync {
    fn model_name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BackendFailure>;
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Offline embedder: bag of hashed terms, L2-normalized.
///
/// A pure function of the text bytes. Text without any alphanumeric term is
/// hashed whole, so the vector is never all-zero.
#[derive(Debug, Clone)]
pub struct LocalHashEmbedder {
    dim: usize,
    model: String,
}

impl LocalHashEmbedder {
    pub const DEFAULT_DIM: usize = 512;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self {
            dim,
            model: format!("local-hash-{dim}"),
        }
    }

    pub fn embed(&self, text: &str) -> Vec<f32> {
        let mut counts = vec![0.0f64; self.dim];
        let toks = terms(text);
        if toks.is_empty() {
            counts[(fnv1a64(text.as_bytes()) % self.dim as u64) as usize] = 1.0;
        }
        for t in &toks {
            counts[(fnv1a64(t.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        counts.iter().map(|c| (c / norm) as f32).collect()
    }
}

impl Default for LocalHashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl EmbeddingBackend for LocalHashEmbedder {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BackendFailure> {
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbedOptions {
    pub batch_size: usize,
    pub max_retries: usize,
    /// Batches sent concurrently.
    pub max_in_flight: usize,
    /// Base delay; attempt `k` waits `backoff * 2^k`.
    pub backoff: Duration,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_retries: 3,
            max_in_flight: 4,
            backoff: Duration::from_millis(500),
        }
    }
}

/// A backend plus the content-addressed cache and retry policy in front of it.
#[derive(Clone)]
pub struct Embedder {
    backend: Arc<dyn EmbeddingBackend>,
    cache: Option<EmbeddingCache>,
    opts: EmbedOptions,
}

impl std::fmt::Debug for Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Embedder")
            .field("model", &self.backend.model_name())
            .field("dim", &self.backend.dim())
            .field("cache", &self.cache.as_ref().map(|c| c.root().to_path_buf()))
            .field("opts", &self.opts)
            .finish()
    }
}

impl Embedder {
    pub fn new(backend: Arc<dyn EmbeddingBackend>) -> Self {
        Self {
            backend,
            cache: None,
            opts: EmbedOptions::default(),
        }
    }

    pub fn with_cache(mut self, cache: EmbeddingCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_options(mut self, opts: EmbedOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn model_name(&self) -> &str {
        self.backend.model_name()
    }

    pub fn dim(&self) -> usize {
        self.backend.dim()
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, SimilarityError> {
        Ok(self.embed_texts(&[text])?.remove(0))
    }

    /// Embeds `texts`, order-aligned. Cached entries are served without
    /// touching the backend; identical texts are requested once.
    pub fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, SimilarityError> {
        let model = self.backend.model_name();
        let mut out: Vec<Option<Vec<f32>>> = vec![None; texts.len()];
        let mut pending: Vec<&str> = Vec::new();
        let mut slots: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, &text) in texts.iter().enumerate() {
            if let Some(cache) = &self.cache {
                if let Some(v) = cache.get(model, text)? {
                    if v.len() != self.backend.dim() {
                        return Err(SimilarityError::DimensionDrift {
                            expected: self.backend.dim(),
                            got: v.len(),
                        });
                    }
                    out[i] = Some(v);
                    continue;
                }
            }
            let entry = slots.entry(text).or_default();
            if entry.is_empty() {
                pending.push(text);
            }
            entry.push(i);
        }

        let batches: Vec<&[&str]> = pending.chunks(self.opts.batch_size.max(1)).collect();
        for wave in batches.chunks(self.opts.max_in_flight.max(1)) {
            let results: Vec<Result<Vec<Vec<f32>>, SimilarityError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|batch| scope.spawn(move || self.request_with_retry(batch)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding worker panicked"))
                    .collect()
            });
            for (batch, result) in wave.iter().zip(results) {
                for (&text, values) in batch.iter().zip(result?) {
                    if let Some(cache) = &self.cache {
                        cache.put(model, text, &values)?;
                    }
                    for &slot in &slots[text] {
                        out[slot] = Some(values.clone());
                    }
                }
            }
        }

        Ok(out
            .into_iter()
            .map(|v| EmbeddingVector::new(v.expect("every slot is filled")))
            .collect())
    }

    fn request_with_retry(&self, batch: &[&str]) -> Result<Vec<Vec<f32>>, SimilarityError> {
        let attempts = self.opts.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            match self.backend.embed_batch(batch) {
                Ok(vectors) => {
                    if vectors.len() != batch.len() {
                        return Err(SimilarityError::BackendUnavailable {
                            attempts: attempt + 1,
                            message: format!("backend returned {} vectors for {} inputs", vectors.len(), batch.len()),
                        });
                    }
                    if let Some(bad) = vectors.iter().find(|v| v.len() != self.backend.dim()) {
                        return Err(SimilarityError::DimensionDrift {
                            expected: self.backend.dim(),
                            got: bad.len(),
                        });
                    }
                    return Ok(vectors);
                }
                Err(e) => {
                    log::warn!("embedding attempt {} of {attempts} failed: {e}", attempt + 1);
                    last = e.message;
                    if attempt + 1 < attempts && !self.opts.backoff.is_zero() {
                        std::thread::sleep(self.opts.backoff * 2u32.saturating_pow(attempt as u32));
                    }
                }
            }
        }
        Err(SimilarityError::BackendUnavailable {
            attempts,
            message: last,
        })
    }
}

pub fn embed_chunks(chunks: &[Chunk], embedder: &Embedder) -> Result<Vec<EmbeddingVector>, SimilarityError> {
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    embedder.embed_texts(&texts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    HttpService,
    LocalHash,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingBackendConfig {
    pub kind: BackendKind,
    pub endpoint: Option<String>,
    pub model_name: String,
    /// Name of the environment variable holding the API key; the key itself
    /// is never stored here.
    pub api_key_env: String,
    pub dim: usize,
    pub batch_size: usize,
    pub max_retries: usize,
    pub max_in_flight: usize,
    pub cache_path: Option<PathBuf>,
}

impl Default for EmbeddingBackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::LocalHash,
            endpoint: None,
            model_name: "text-embedding-3-large".into(),
            api_key_env: "EMBED_API_KEY".into(),
            dim: LocalHashEmbedder::DEFAULT_DIM,
            batch_size: 32,
            max_retries: 3,
            max_in_flight: 4,
            cache_path: None,
        }
    }
}

impl EmbeddingBackendConfig {
    pub fn build(&self) -> Result<Embedder, SimilarityError> {
        if self.batch_size == 0 {
            return Err(SimilarityError::BackendUnavailable {
                attempts: 0,
                message: "batch size must be at least 1".into(),
            });
        }
        let backend: Arc<dyn EmbeddingBackend> = match self.kind {
            BackendKind::LocalHash => Arc::new(LocalHashEmbedder::new(self.dim)),
            BackendKind::HttpService => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| SimilarityError::BackendUnavailable {
                        attempts: 0,
                        message: "http embedding backend needs an endpoint".into(),
                    })?;
                Arc::new(HttpEmbeddingBackend::new(
                    endpoint,
                    &self.model_name,
                    self.dim,
                    &self.api_key_env,
                ))
            }
        };
        let mut embedder = Embedder::new(backend).with_options(EmbedOptions {
            batch_size: self.batch_size,
            max_retries: self.max_retries,
            max_in_flight: self.max_in_flight,
            ..EmbedOptions::default()
        });
        if let Some(path) = &self.cache_path {
            embedder = embedder.with_cache(EmbeddingCache::open(path)?);
        }
        Ok(embedder)
    }
}
