//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use clorder::corpus::EstimatorMode;
use clorder::ordering::Strategy;
use clorder::similarity::Symmetrization;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityKind {
    /// Embeddings from an HTTP service.
    Dense,
    Bm25,
    LocalHash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GenerationKind {
    Http,
    Mock,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub strategies: Vec<Strategy>,
    pub similarity: SimilarityKind,
    pub generation: GenerationKind,
    pub per_chunk_token_limit: usize,
    pub summary_token_limit: usize,
    pub temperature: f64,
    pub top_p: f64,
    pub max_output_tokens: usize,
    pub parallel: usize,
    pub cache_dir: PathBuf,
    pub seed: u64,
    pub estimator: EstimatorMode,
    pub vocabulary: Option<PathBuf>,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub bm25_symmetrization: Symmetrization,
    pub embed_endpoint: Option<String>,
    pub embed_model: String,
    pub embed_dim: usize,
    pub embed_batch_size: usize,
    pub gen_endpoint: Option<String>,
    pub gen_model: String,
    pub max_context_tokens: usize,
    pub max_retries: usize,
    /// Outbound requests per second across both backends; 0 disables.
    pub rate_limit: f64,
    pub mock_capacity: usize,
    pub frozen_timing: bool,
    pub task_instruction: Option<String>,
    pub similarity_matrix_file: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            strategies: vec![Strategy::ClOrder],
            similarity: SimilarityKind::LocalHash,
            generation: GenerationKind::Mock,
            per_chunk_token_limit: 8000,
            summary_token_limit: 8000,
            temperature: 0.0,
            top_p: 0.95,
            max_output_tokens: 8000,
            parallel: 4,
            cache_dir: PathBuf::from(".clorder-cache"),
            seed: 0,
            estimator: EstimatorMode::WhitespaceWords,
            vocabulary: None,
            bm25_k1: 1.2,
            bm25_b: 0.75,
            bm25_symmetrization: Symmetrization::ScoreMean,
            embed_endpoint: None,
            embed_model: "text-embedding-3-large".into(),
            embed_dim: 3072,
            embed_batch_size: 32,
            gen_endpoint: None,
            gen_model: "gpt-4.1".into(),
            max_context_tokens: 128_000,
            max_retries: 3,
            rate_limit: 0.0,
            mock_capacity: 8,
            frozen_timing: false,
            task_instruction: None,
            similarity_matrix_file: None,
            output_dir: PathBuf::from("clorder-out"),
        }
    }
}

fn parse_strategies(v: &str) -> Result<Vec<Strategy>> {
    if v.trim() == "all" {
        return Ok(Strategy::COMPARED.to_vec());
    }
    let mut out = Vec::new();
    for part in v.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let s: Strategy = part.parse()?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    if out.is_empty() {
        bail!("no strategy given");
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse()
        .map_err(|e| anyhow::anyhow!("`{key}`: cannot parse {v:?}: {e}"))
}

fn positive(key: &str, v: &str) -> Result<usize> {
    let n: usize = num(key, v)?;
    if n == 0 {
        bail!("`{key}` must be greater than 0");
    }
    Ok(n)
}

fn optional(v: &str) -> Option<String> {
    (!v.is_empty()).then(|| v.to_owned())
}

impl RunConfig {
    /// Applies one setting. Unknown keys are an error so typos surface.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        if key.ends_with("api_key") || key.contains("secret") {
            bail!("`{key}`: API keys are read from EMBED_API_KEY / GEN_API_KEY only");
        }
        match key {
            "dataset" => self.dataset = optional(v).map(PathBuf::from),
            "strategy" => self.strategies = parse_strategies(v)?,
            "similarity" => {
                self.similarity = match v {
                    "dense" => SimilarityKind::Dense,
                    "bm25" => SimilarityKind::Bm25,
                    "local-hash" => SimilarityKind::LocalHash,
                    other => bail!("`similarity`: expected dense, bm25 or local-hash, got {other:?}"),
                }
            }
            "generation" => {
                self.generation = match v {
                    "http" => GenerationKind::Http,
                    "mock" => GenerationKind::Mock,
                    other => bail!("`generation`: expected http or mock, got {other:?}"),
                }
            }
            "per_chunk_token_limit" => self.per_chunk_token_limit = positive(key, v)?,
            "summary_token_limit" => self.summary_token_limit = positive(key, v)?,
            "temperature" => self.temperature = num(key, v)?,
            "top_p" => self.top_p = num(key, v)?,
            "max_output_tokens" => self.max_output_tokens = positive(key, v)?,
            "parallel" => self.parallel = num(key, v)?,
            "cache_dir" => self.cache_dir = PathBuf::from(v),
            "seed" => self.seed = num(key, v)?,
            "estimator" => {
                self.estimator = match v {
                    "whitespace" => EstimatorMode::WhitespaceWords,
                    "bytes" => EstimatorMode::BytesDiv4,
                    "table" => EstimatorMode::ExternalTokenizerTable,
                    other => bail!("`estimator`: expected whitespace, bytes or table, got {other:?}"),
                }
            }
            "vocabulary" => self.vocabulary = optional(v).map(PathBuf::from),
            "bm25_k1" => self.bm25_k1 = num(key, v)?,
            "bm25_b" => self.bm25_b = num(key, v)?,
            "bm25_symmetrization" => {
                self.bm25_symmetrization = match v {
                    "score-mean" => Symmetrization::ScoreMean,
                    "rank-mean" => Symmetrization::RankMean,
                    other => bail!("`bm25_symmetrization`: expected score-mean or rank-mean, got {other:?}"),
                }
            }
            "embed_endpoint" => self.embed_endpoint = optional(v),
            "embed_model" => self.embed_model = v.to_owned(),
            "embed_dim" => self.embed_dim = positive(key, v)?,
            "embed_batch_size" => self.embed_batch_size = positive(key, v)?,
            "gen_endpoint" => self.gen_endpoint = optional(v),
            "gen_model" => self.gen_model = v.to_owned(),
            "max_context_tokens" => self.max_context_tokens = positive(key, v)?,
            "max_retries" => self.max_retries = num(key, v)?,
            "rate_limit" => self.rate_limit = num(key, v)?,
            "mock_capacity" => self.mock_capacity = positive(key, v)?,
            "frozen_timing" => self.frozen_timing = num(key, v)?,
            "task_instruction" => self.task_instruction = optional(v),
            "similarity_matrix_file" => self.similarity_matrix_file = optional(v).map(PathBuf::from),
            "output_dir" => self.output_dir = PathBuf::from(v),
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    /// Reads `key = value` lines; `#` starts a comment line.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        for (i, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected `key = value`", path.display(), i + 1))?;
            self.set(k.trim(), v)
                .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        }
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.temperature) {
            bail!("`temperature` must lie in [0, 2]");
        }
        if !(0.0..=1.0).contains(&self.top_p) || self.top_p == 0.0 {
            bail!("`top_p` must lie in (0, 1]");
        }
        if self.rate_limit < 0.0 || !self.rate_limit.is_finite() {
            bail!("`rate_limit` must be a non-negative number");
        }
        if self.similarity == SimilarityKind::Dense
            && self.embed_endpoint.is_none()
            && self.similarity_matrix_file.is_none()
        {
            bail!("`similarity = dense` needs `embed_endpoint`");
        }
        if self.generation == GenerationKind::Http && self.gen_endpoint.is_none() {
            bail!("`generation = http` needs `gen_endpoint`");
        }
        if self.estimator == EstimatorMode::ExternalTokenizerTable && self.vocabulary.is_none() {
            bail!("`estimator = table` needs `vocabulary`");
        }
        Ok(())
    }

    /// Every setting as `(key, value)`, in a fixed order. Holds no secrets.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let strategies: Vec<&str> = self.strategies.iter().map(Strategy::as_str).collect();
        vec![
            ("dataset", path(&self.dataset)),
            ("strategy", strategies.join(",")),
            (
                "similarity",
                match self.similarity {
                    SimilarityKind::Dense => "dense",
                    SimilarityKind::Bm25 => "bm25",
                    SimilarityKind::LocalHash => "local-hash",
                }
                .into(),
            ),
            (
                "generation",
                match self.generation {
                    GenerationKind::Http => "http",
                    GenerationKind::Mock => "mock",
                }
                .into(),
            ),
            ("per_chunk_token_limit", self.per_chunk_token_limit.to_string()),
            ("summary_token_limit", self.summary_token_limit.to_string()),
            ("temperature", self.temperature.to_string()),
            ("top_p", self.top_p.to_string()),
            ("max_output_tokens", self.max_output_tokens.to_string()),
            ("parallel", self.parallel.to_string()),
            ("cache_dir", self.cache_dir.display().to_string()),
            ("seed", self.seed.to_string()),
            (
                "estimator",
                match self.estimator {
                    EstimatorMode::WhitespaceWords => "whitespace",
                    EstimatorMode::BytesDiv4 => "bytes",
                    EstimatorMode::ExternalTokenizerTable => "table",
                }
                .into(),
            ),
            ("vocabulary", path(&self.vocabulary)),
            ("bm25_k1", self.bm25_k1.to_string()),
            ("bm25_b", self.bm25_b.to_string()),
            (
                "bm25_symmetrization",
                match self.bm25_symmetrization {
                    Symmetrization::ScoreMean => "score-mean",
                    Symmetrization::RankMean => "rank-mean",
                }
                .into(),
            ),
            ("embed_endpoint", self.embed_endpoint.clone().unwrap_or_default()),
            ("embed_model", self.embed_model.clone()),
            ("embed_dim", self.embed_dim.to_string()),
            ("embed_batch_size", self.embed_batch_size.to_string()),
            ("gen_endpoint", self.gen_endpoint.clone().unwrap_or_default()),
            ("gen_model", self.gen_model.clone()),
            ("max_context_tokens", self.max_context_tokens.to_string()),
            ("max_retries", self.max_retries.to_string()),
            ("rate_limit", self.rate_limit.to_string()),
            ("mock_capacity", self.mock_capacity.to_string()),
            ("frozen_timing", self.frozen_timing.to_string()),
            ("task_instruction", self.task_instruction.clone().unwrap_or_default()),
            ("similarity_matrix_file", path(&self.similarity_matrix_file)),
            ("output_dir", self.output_dir.display().to_string()),
        ]
    }

    /// The effective config in the same format `apply_file` reads.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {}", v.replace('\n', " "));
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let map: serde_json::Map<String, serde_json::Value> = self
            .entries()
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v.into()))
            .collect();
        serde_json::Value::Object(map)
    }
}
