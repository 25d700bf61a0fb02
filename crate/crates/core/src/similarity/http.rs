use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::embed::{BackendFailure, EmbeddingBackend};
use crate::throttle::RateLimiter;

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

/// Client for an OpenAI-style `/embeddings` endpoint.
pub struct HttpEmbeddingBackend {
    endpoint: String,
    model: String,
    dim: usize,
    api_key_env: String,
    agent: ureq::Agent,
    limiter: Option<Arc<RateLimiter>>,
}

impl std::fmt::Debug for HttpEmbeddingBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpEmbeddingBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("dim", &self.dim)
            .field("api_key_env", &self.api_key_env)
            .finish_non_exhaustive()
    }
}

impl HttpEmbeddingBackend {
    pub fn new(endpoint: impl Into<String>, model: &str, dim: usize, api_key_env: &str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            model: model.to_owned(),
            dim,
            api_key_env: api_key_env.to_owned(),
            agent,
            limiter: None,
        }
    }

    pub fn with_rate_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.limiter = Some(limiter);
        self
    }
}

impl EmbeddingBackend for HttpEmbeddingBackend {
    fn model_name(&self) -> &str {
        &self.model
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, BackendFailure> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        let mut request = self.agent.post(&self.endpoint);
        if let Ok(key) = std::env::var(&self.api_key_env) {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let body = EmbeddingRequest {
            model: &self.model,
            input: texts,
        };
        let mut response = request
            .send_json(&body)
            .map_err(|e| BackendFailure::new(format!("POST {}: {e}", self.endpoint)))?;
        let parsed: EmbeddingResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendFailure::new(format!("decoding embedding response: {e}")))?;
        Ok(parsed.data.into_iter().map(|d| d.embedding).collect())
    }
}
