//! Okapi BM25 with the chunk set itself as the corpus.
//!
//! score(Q, D) = Σ_{t ∈ Q} IDF(t) · tf(t, D)·(k1 + 1) / (tf(t, D) + k1·(1 − b + b·|D|/avgdl))
//! IDF(t)      = ln(1 + (N − df(t) + 0.5) / (df(t) + 0.5))
//!
//! Query terms are deduplicated, so a chunk used as a query contributes each
//! of its terms once.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{terms, MatrixKind, SimilarityMatrix};
use crate::corpus::Chunk;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// How the two directed scores of a chunk pair are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Symmetrization {
    /// Mean of `score(x_i → x_j)` and `score(x_j → x_i)`.
    #[default]
    ScoreMean,
    /// `n − mean(rank_i(j), rank_j(i))`, ranks 1-based within each query row.
    RankMean,
}

pub struct Bm25Index {
    term_freqs: Vec<HashMap<String, usize>>,
    doc_lens: Vec<usize>,
    doc_freq: HashMap<String, usize>,
    avgdl: f64,
    params: Bm25Params,
}

impl Bm25Index {
    pub fn new<S: AsRef<str>>(docs: &[S], params: Bm25Params) -> Self {
        let mut term_freqs = Vec::with_capacity(docs.len());
        let mut doc_lens = Vec::with_capacity(docs.len());
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for doc in docs {
            let toks = terms(doc.as_ref());
            doc_lens.push(toks.len());
            let mut tf: HashMap<String, usize> = HashMap::new();
            for t in toks {
                *tf.entry(t).or_default() += 1;
            }
            for t in tf.keys() {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
            term_freqs.push(tf);
        }
        let total: usize = doc_lens.iter().sum();
        let avgdl = if docs.is_empty() {
            0.0
        } else {
            total as f64 / docs.len() as f64
        };
        Self {
            term_freqs,
            doc_lens,
            doc_freq,
            avgdl,
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.doc_lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_lens.is_empty()
    }

    fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// Scores `doc` against an already-deduplicated list of query terms.
    pub fn score(&self, query_terms: &[String], doc: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let len_ratio = if self.avgdl > 0.0 {
            self.doc_lens[doc] as f64 / self.avgdl
        } else {
            1.0
        };
        let tf = &self.term_freqs[doc];
        query_terms
            .iter()
            .filter_map(|t| tf.get(t).map(|&f| (t, f as f64)))
            .map(|(t, f)| self.idf(t) * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * len_ratio)))
            .sum()
    }

    /// Distinct terms of `doc` in first-occurrence order.
    fn doc_terms(&self, text: &str) -> Vec<String> {
        distinct(terms(text))
    }
}

fn distinct(items: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    items.into_iter().filter(|t| seen.insert(t.clone())).collect()
}

/// Symmetric BM25 matrix over chunk texts.
pub fn bm25_symmetric_texts<S: AsRef<str>>(texts: &[S], params: Bm25Params, mode: Symmetrization) -> SimilarityMatrix {
    let n = texts.len();
    let index = Bm25Index::new(texts, params);
    let queries: Vec<Vec<String>> = texts.iter().map(|t| index.doc_terms(t.as_ref())).collect();
    let directed = |i: usize, j: usize| index.score(&queries[i], j);
    match mode {
        Symmetrization::ScoreMean => SimilarityMatrix::from_pairs(n, MatrixKind::Bm25Symmetric, |i, j| {
            (directed(i, j) + directed(j, i)) / 2.0
        }),
        Symmetrization::RankMean => {
            let scores: Vec<Vec<f64>> = (0..n)
                .map(|i| (0..n).map(|j| if i == j { 0.0 } else { directed(i, j) }).collect())
                .collect();
            let rank = |i: usize, j: usize| {
                1 + (0..n)
                    .filter(|&k| k != i && k != j)
                    .filter(|&k| scores[i][k] > scores[i][j] || (scores[i][k] == scores[i][j] && k < j))
                    .count()
            };
            SimilarityMatrix::from_pairs(n, MatrixKind::Bm25Symmetric, |i, j| {
                n as f64 - (rank(i, j) + rank(j, i)) as f64 / 2.0
            })
        }
    }
}

pub fn bm25_symmetric(chunks: &[Chunk], params: Bm25Params) -> SimilarityMatrix {
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    bm25_symmetric_texts(&texts, params, Symmetrization::ScoreMean)
}

/// BM25 of the query against every chunk, used for root selection and the
/// dense baseline when BM25 replaces embeddings.
pub fn bm25_query_scores<S: AsRef<str>>(query: &str, texts: &[S], params: Bm25Params) -> Vec<f64> {
    let index = Bm25Index::new(texts, params);
    let q = distinct(terms(query));
    (0..texts.len()).map(|j| index.score(&q, j)).collect()
}
