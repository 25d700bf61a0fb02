//! Pairwise chunk relatedness.
//!
//! The matrix built here stands in for pairwise mutual information between
//! chunks: it becomes the edge weights of the complete chunk graph whose
//! maximum-weight spanning tree drives the ordering. Two sources are
//! provided, dense embeddings (cosine) and symmetric BM25.

mod bm25;
mod cache;
mod embed;
mod http;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bm25::{bm25_query_scores, bm25_symmetric, bm25_symmetric_texts, Bm25Index, Bm25Params, Symmetrization};
pub use cache::{CacheStats, EmbeddingCache};
pub use embed::{
    embed_chunks, BackendFailure, BackendKind, EmbedOptions, Embedder, EmbeddingBackend, EmbeddingBackendConfig,
    LocalHashEmbedder,
};
pub use http::HttpEmbeddingBackend;

#[derive(Debug, Error)]
pub enum SimilarityError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine is undefined for an all-zero vector")]
    ZeroVector,
    #[error("embedding backend unavailable after {attempts} attempts: {message}")]
    BackendUnavailable { attempts: usize, message: String },
    #[error("embedding backend returned dimension {got}, expected {expected}")]
    DimensionDrift { expected: usize, got: usize },
    #[error("similarity matrix: {0}")]
    InvalidMatrix(String),
    #[error("embedding cache: {0}")]
    Cache(String),
}

/// A dense embedding. Values are stored as `f32`, the precision of both the
/// cache format and the HTTP wire format, so cached and fresh vectors are
/// bit-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

impl From<Vec<f32>> for EmbeddingVector {
    fn from(values: Vec<f32>) -> Self {
        Self { values }
    }
}

fn dot_and_norms(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<(f64, f64, f64), SimilarityError> {
    if u.dim() != v.dim() {
        return Err(SimilarityError::DimensionMismatch {
            left: u.dim(),
            right: v.dim(),
        });
    }
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.values.iter().zip(&v.values) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    Ok((dot, nu, nv))
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, SimilarityError> {
    let (dot, nu, nv) = dot_and_norms(u, v)?;
    if nu == 0.0 || nv == 0.0 {
        return Err(SimilarityError::ZeroVector);
    }
    Ok((dot / (nu * nv).sqrt()).clamp(-1.0, 1.0))
}

/// Raw inner product, for callers that opt out of normalization.
pub fn inner_product(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, SimilarityError> {
    dot_and_norms(u, v).map(|(dot, _, _)| dot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixKind {
    DenseCosine,
    DenseInnerProduct,
    Bm25Symmetric,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DenseMeasure {
    #[default]
    Cosine,
    InnerProduct,
}

/// Symmetric `n x n` relatedness scores with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
    kind: MatrixKind,
}

impl SimilarityMatrix {
    /// Builds a matrix by evaluating `f(i, j)` once per unordered pair
    /// `i < j` and mirroring it, so symmetry is exact.
    pub fn try_from_pairs<E, F>(n: usize, kind: MatrixKind, mut f: F) -> Result<Self, E>
    where
        F: FnMut(usize, usize) -> Result<f64, E>,
    {
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let v = f(i, j)?;
                values[i * n + j] = v;
                values[j * n + i] = v;
            }
        }
        Ok(Self { n, values, kind })
    }

    pub fn from_pairs<F: FnMut(usize, usize) -> f64>(n: usize, kind: MatrixKind, mut f: F) -> Self {
        Self::try_from_pairs::<std::convert::Infallible, _>(n, kind, |i, j| Ok(f(i, j))).unwrap_or_else(|e| match e {})
    }

    /// Accepts a user-supplied square matrix. Off-diagonal entries must be
    /// finite and exactly symmetric; the diagonal is ignored and zeroed.
    pub fn from_rows(rows: &[Vec<f64>], kind: MatrixKind) -> Result<Self, SimilarityError> {
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(SimilarityError::InvalidMatrix(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (a, b) = (rows[i][j], rows[j][i]);
                if !a.is_finite() {
                    return Err(SimilarityError::InvalidMatrix(format!(
                        "entry ({i}, {j}) is not finite"
                    )));
                }
                if a.to_bits() != b.to_bits() {
                    return Err(SimilarityError::InvalidMatrix(format!(
                        "entries ({i}, {j}) and ({j}, {i}) differ: {a} vs {b}"
                    )));
                }
            }
        }
        Ok(Self::from_pairs(n, kind, |i, j| rows[i][j]))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// Returns `M'` with `M'[a][b] = M[perm[a]][perm[b]]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::from_pairs(self.n, self.kind, |a, b| self.get(perm[a], perm[b]))
    }
}

/// Builds the dense cosine matrix over chunk embeddings.
pub fn build_similarity_matrix(embeddings: &[EmbeddingVector]) -> Result<SimilarityMatrix, SimilarityError> {
    build_similarity_matrix_with(embeddings, DenseMeasure::Cosine)
}

pub fn build_similarity_matrix_with(
    embeddings: &[EmbeddingVector],
    measure: DenseMeasure,
) -> Result<SimilarityMatrix, SimilarityError> {
    if let Some(first) = embeddings.first() {
        if let Some(bad) = embeddings.iter().find(|e| e.dim() != first.dim()) {
            return Err(SimilarityError::DimensionMismatch {
                left: first.dim(),
                right: bad.dim(),
            });
        }
    }
    type Measure = fn(&EmbeddingVector, &EmbeddingVector) -> Result<f64, SimilarityError>;
    let (kind, f): (MatrixKind, Measure) = match measure {
        DenseMeasure::Cosine => (MatrixKind::DenseCosine, cosine),
        DenseMeasure::InnerProduct => (MatrixKind::DenseInnerProduct, inner_product),
    };
    SimilarityMatrix::try_from_pairs(embeddings.len(), kind, |i, j| f(&embeddings[i], &embeddings[j]))
}

/// Cosine of the query against every chunk, order-aligned with `chunks`.
pub fn query_similarity(query: &EmbeddingVector, chunks: &[EmbeddingVector]) -> Result<Vec<f64>, SimilarityError> {
    chunks.iter().map(|c| cosine(query, c)).collect()
}

/// Precomputed matrix as read from a `--similarity-matrix-file`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixFile {
    pub values: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_scores: Option<Vec<f64>>,
}

impl MatrixFile {
    pub fn into_matrix(&self) -> Result<SimilarityMatrix, SimilarityError> {
        SimilarityMatrix::from_rows(&self.values, MatrixKind::Custom)
    }
}

/// Lowercased alphanumeric terms, the shared lexical view of text used by
/// BM25, the hash embedder and the mock backend.
pub fn terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}
