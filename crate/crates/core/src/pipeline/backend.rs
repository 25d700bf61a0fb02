use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::throttle::RateLimiter;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: usize,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 0.95,
            max_output_tokens: 8000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendLimits {
    pub max_context_tokens: usize,
    pub max_output_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("generation failed after {attempts} attempt(s): {message}")]
pub struct GenerationFailure {
    pub attempts: usize,
    pub message: String,
}

/// Text-generation contract. Implementations must tolerate concurrent calls.
pub trait GenerationBackend: Send + Sync {
    fn name(&self) -> &str;
    fn limits(&self) -> BackendLimits;
    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, GenerationFailure>;
}

impl<B: GenerationBackend + ?Sized> GenerationBackend for Arc<B> {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn limits(&self) -> BackendLimits {
        (**self).limits()
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, GenerationFailure> {
        (**self).generate(prompt, params)
    }
}

/// OpenAI-style chat completions client.
pub struct HttpGenerationBackend {
    endpoint: String,
    model: String,
    api_key_env: String,
    limits: BackendLimits,
    max_retries: usize,
    backoff: Duration,
    agent: ureq::Agent,
    limiter: Option<Arc<RateLimiter>>,
}

impl std::fmt::Debug for HttpGenerationBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpGenerationBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key_env", &self.api_key_env)
            .field("max_retries", &self.max_retries)
            .finish_non_exhaustive()
    }
}

impl HttpGenerationBackend {
    pub const DEFAULT_KEY_ENV: &'static str = "GEN_API_KEY";

    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, limits: BackendLimits) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(600)))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key_env: Self::DEFAULT_KEY_ENV.to_owned(),
            limits,
            max_retries: 3,
            backoff: Duration::from_millis(500),
            agent,
            limiter: None,
        }
    }

    pub fn with_api_key_env(mut self, var: impl Into<String>) -> Self {
        self.api_key_env = var.into();
        self
    }

    pub fn with_retries(mut self, max_retries: usize, backoff: Duration) -> Self {
        self.max_retries = max_retries.max(1);
        self.backoff = backoff;
        self
    }

    pub fn with_rate_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.limiter = Some(limiter);
        self
    }

    fn attempt(&self, prompt: &str, params: &GenerationParams) -> Result<String, String> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_output_tokens.min(self.limits.max_output_tokens),
        });
        let mut request = self.agent.post(&self.endpoint);
        if let Ok(key) = std::env::var(&self.api_key_env) {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| format!("POST {}: {e}", self.endpoint))?;
        let value: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| format!("decoding completion: {e}"))?;
        let choice = &value["choices"][0];
        choice["message"]["content"]
            .as_str()
            .or_else(|| choice["text"].as_str())
            .map(str::to_owned)
            .ok_or_else(|| "completion has no choices[0] text".to_owned())
    }
}

impl GenerationBackend for HttpGenerationBackend {
    fn name(&self) -> &str {
        &self.model
    }

    fn limits(&self) -> BackendLimits {
        self.limits
    }

    fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<String, GenerationFailure> {
        let mut last = String::new();
        for attempt in 1..=self.max_retries {
            match self.attempt(prompt, params) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("generation attempt {attempt}/{} failed: {e}", self.max_retries);
                    last = e;
                }
            }
            if attempt < self.max_retries {
                std::thread::sleep(self.backoff * 2u32.pow(attempt as u32 - 1));
            }
        }
        Err(GenerationFailure {
            attempts: self.max_retries,
            message: last,
        })
    }
}
