//! Fact-slot model of a bounded summarization memory.
//!
//! Every chunk carries `(key, value)` facts tagged with a planted cluster.
//! A cluster "activates" once facts from two different steps fall inside a
//! sliding window of `W` consecutive steps. Until then its facts are
//! dropped; at activation the in-window facts of that cluster are committed,
//! and later facts of an active cluster are committed as they arrive.
//! Memory evicts oldest-first beyond `capacity`.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use super::ChowLiuError;
use crate::ordering::{plan_ordering, Strategy};
use crate::similarity::{build_similarity_matrix, query_similarity, EmbeddingVector, LocalHashEmbedder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactChunk {
    pub chunk_id: String,
    pub facts: Vec<(String, String)>,
    pub cluster_id: usize,
    /// Rendered text used for similarity; not read by the simulator.
    #[serde(default)]
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LossyMemory {
    capacity: usize,
    retained: VecDeque<(String, String)>,
}

impl LossyMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "memory capacity must be at least 1");
        Self {
            capacity,
            retained: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, fact: (String, String)) {
        self.retained.push_back(fact);
        if self.retained.len() > self.capacity {
            self.retained.pop_front();
        }
    }

    pub fn retained(&self) -> impl Iterator<Item = &(String, String)> {
        self.retained.iter()
    }

    pub fn len(&self) -> usize {
        self.retained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.retained.is_empty()
    }
}

/// Runs the memory model and returns the final memory.
pub fn run_lossy_memory(chunks: &[FactChunk], order: &[usize], capacity: usize, window: usize) -> LossyMemory {
    let mut memory = LossyMemory::new(capacity);
    let mut active: HashSet<usize> = HashSet::new();
    // (step, chunk index) of the last `window` steps
    let mut recent: VecDeque<(usize, usize)> = VecDeque::new();
    for (t, &idx) in order.iter().enumerate() {
        while recent.front().is_some_and(|&(s, _)| s + window <= t) {
            recent.pop_front();
        }
        let chunk = &chunks[idx];
        let c = chunk.cluster_id;
        if window > 0 && !active.contains(&c) && !chunk.facts.is_empty() {
            let earlier: Vec<usize> = recent
                .iter()
                .filter(|&&(_, j)| chunks[j].cluster_id == c && !chunks[j].facts.is_empty())
                .map(|&(_, j)| j)
                .collect();
            if !earlier.is_empty() {
                active.insert(c);
                for j in earlier {
                    chunks[j].facts.iter().cloned().for_each(|f| memory.push(f));
                }
            }
        }
        if active.contains(&c) {
            chunk.facts.iter().cloned().for_each(|f| memory.push(f));
        }
        recent.push_back((t, idx));
    }
    memory
}

/// Number of `relevance_keys` present in the final memory.
pub fn simulate_lossy_pipeline(
    chunks: &[FactChunk],
    order: &[usize],
    capacity: usize,
    window: usize,
    relevance_keys: &HashSet<String>,
) -> usize {
    run_lossy_memory(chunks, order, capacity, window)
        .retained()
        .filter(|(k, _)| relevance_keys.contains(k))
        .count()
}

/// Shape of the planted-cluster corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticParams {
    pub clusters: usize,
    pub chunks_per_cluster: usize,
    pub topic_vocab: usize,
    pub topic_pick: usize,
    pub filler_pool: usize,
    pub filler_pick: usize,
    pub facts_per_chunk: usize,
    /// Topic words the query draws from each cluster, in pairs.
    pub query_affinity: Vec<usize>,
    /// Query-only words shared by the first chunk of every cluster.
    pub hub_terms: usize,
    pub capacity: usize,
    pub window: usize,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            clusters: 4,
            chunks_per_cluster: 3,
            topic_vocab: 8,
            topic_pick: 4,
            filler_pool: 40,
            filler_pick: 6,
            facts_per_chunk: 2,
            query_affinity: vec![1, 1, 1, 0],
            hub_terms: 1,
            capacity: 20,
            window: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub chunks: Vec<FactChunk>,
    pub query: String,
    pub relevance_keys: HashSet<String>,
}

/// Draws one corpus. Facts whose key ends in `x0` are the relevant ones.
pub fn generate_synthetic_corpus(seed: u64, params: &SyntheticParams) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chunks = Vec::with_capacity(params.clusters * params.chunks_per_cluster);
    for c in 0..params.clusters {
        for m in 0..params.chunks_per_cluster {
            let mut words: Vec<String> = sample(&mut rng, params.topic_vocab, params.topic_pick)
                .into_iter()
                .map(|i| format!("t{c}w{i}"))
                .collect();
            if m == 0 {
                words.extend((0..params.hub_terms).map(|i| format!("qh{i}")));
            }
            words.extend(
                sample(&mut rng, params.filler_pool, params.filler_pick)
                    .into_iter()
                    .map(|i| format!("f{i}")),
            );
            let facts: Vec<(String, String)> = (0..params.facts_per_chunk)
                .map(|j| (format!("k{c}x{m}x{j}"), format!("v{}", rng.gen_range(0..1000))))
                .collect();
            let mut text = words.join(" ");
            for (k, v) in &facts {
                text.push_str(&format!("\n{k}: {v}"));
            }
            chunks.push(FactChunk {
                chunk_id: String::new(),
                facts,
                cluster_id: c,
                text,
            });
        }
    }
    chunks.shuffle(&mut rng);
    for (i, ch) in chunks.iter_mut().enumerate() {
        ch.chunk_id = format!("syn{seed}#{i}");
    }
    let relevance_keys = chunks
        .iter()
        .flat_map(|ch| ch.facts.iter())
        .filter(|(k, _)| k.ends_with("x0"))
        .map(|(k, _)| k.clone())
        .collect();
    let mut query: Vec<String> = (0..params.hub_terms).map(|i| format!("qh{i}")).collect();
    for (c, &a) in params.query_affinity.iter().enumerate() {
        let k = (2 * a).min(params.topic_vocab);
        query.extend(
            sample(&mut rng, params.topic_vocab, k)
                .into_iter()
                .map(|i| format!("t{c}w{i}")),
        );
    }
    SyntheticCorpus {
        chunks,
        query: query.join(" "),
        relevance_keys,
    }
}

/// Mixes the corpus seed into an independent stream for the random order.
fn random_order_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Retention per strategy on one corpus, using local hash embeddings.
pub fn retention_by_strategy(
    corpus: &SyntheticCorpus,
    params: &SyntheticParams,
    seed: u64,
    strategies: &[Strategy],
) -> Result<Vec<usize>, ChowLiuError> {
    let embedder = LocalHashEmbedder::default();
    let vectors: Vec<EmbeddingVector> = corpus
        .chunks
        .iter()
        .map(|c| EmbeddingVector::new(embedder.embed(&c.text)))
        .collect();
    let query = EmbeddingVector::new(embedder.embed(&corpus.query));
    let sim = |e: crate::similarity::SimilarityError| ChowLiuError::Simulation(e.to_string());
    let matrix = build_similarity_matrix(&vectors).map_err(sim)?;
    let scores = query_similarity(&query, &vectors).map_err(sim)?;
    strategies
        .iter()
        .map(|&s| {
            let ordering = plan_ordering(s, &matrix, &scores, random_order_seed(seed))
                .map_err(|e| ChowLiuError::Simulation(e.to_string()))?;
            Ok(simulate_lossy_pipeline(
                &corpus.chunks,
                &ordering.order,
                params.capacity,
                params.window,
                &corpus.relevance_keys,
            ))
        })
        .collect()
}

/// One line of the simulator report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatorReport {
    pub strategy: Strategy,
    pub seeds: usize,
    pub mean_retention: f64,
    pub stddev: f64,
}

/// One-sided sign test that `a` beats `b`; ties are dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    pub p_value: f64,
}

pub fn sign_test(a: &[usize], b: &[usize]) -> SignTest {
    assert_eq!(a.len(), b.len(), "paired samples differ in length");
    let wins = a.iter().zip(b).filter(|(x, y)| x > y).count();
    let losses = a.iter().zip(b).filter(|(x, y)| x < y).count();
    let ties = a.len() - wins - losses;
    let trials = (wins + losses) as u64;
    let p_value = if wins == 0 {
        1.0
    } else {
        let binom = Binomial::new(0.5, trials).expect("valid binomial parameters");
        // P(X >= wins)
        binom.sf(wins as u64 - 1)
    };
    SignTest {
        wins,
        losses,
        ties,
        p_value,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloResult {
    pub reports: Vec<SimulatorReport>,
    pub per_seed: BTreeMap<Strategy, Vec<usize>>,
}

impl MonteCarloResult {
    pub fn mean(&self, s: Strategy) -> Option<f64> {
        self.reports.iter().find(|r| r.strategy == s).map(|r| r.mean_retention)
    }

    pub fn sign_test(&self, a: Strategy, b: Strategy) -> Option<SignTest> {
        Some(sign_test(self.per_seed.get(&a)?, self.per_seed.get(&b)?))
    }
}

/// Runs seeds `first_seed..first_seed + seeds` in parallel; results do not
/// depend on thread count.
pub fn monte_carlo(
    seeds: usize,
    first_seed: u64,
    params: &SyntheticParams,
    strategies: &[Strategy],
) -> Result<MonteCarloResult, ChowLiuError> {
    let rows: Vec<Vec<usize>> = (0..seeds as u64)
        .into_par_iter()
        .map(|k| {
            let seed = first_seed + k;
            retention_by_strategy(&generate_synthetic_corpus(seed, params), params, seed, strategies)
        })
        .collect::<Result<_, _>>()?;
    let unique: BTreeSet<Strategy> = strategies.iter().copied().collect();
    let mut per_seed = BTreeMap::new();
    let mut reports = Vec::new();
    for s in Strategy::ALL.into_iter().filter(|s| unique.contains(s)) {
        let col = strategies.iter().position(|x| *x == s).expect("strategy listed");
        let values: Vec<usize> = rows.iter().map(|r| r[col]).collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<usize>() as f64 / n;
        let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        reports.push(SimulatorReport {
            strategy: s,
            seeds,
            mean_retention: mean,
            stddev: var.sqrt(),
        });
        per_seed.insert(s, values);
    }
    Ok(MonteCarloResult { reports, per_seed })
}
