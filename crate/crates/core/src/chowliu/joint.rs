use serde::{Deserialize, Serialize};

use super::ChowLiuError;
use crate::ordering::{max_spanning_tree, parents_and_depths, DependencyTree};
use crate::similarity::{MatrixKind, SimilarityMatrix};

/// Exact joint distribution over discrete variables.
///
/// `probabilities` is row-major over the outcome product: the last variable
/// varies fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteJoint {
    cardinalities: Vec<usize>,
    probabilities: Vec<f64>,
}

const SUM_TOLERANCE: f64 = 1e-12;

impl DiscreteJoint {
    pub fn new(cardinalities: Vec<usize>, probabilities: Vec<f64>) -> Result<Self, ChowLiuError> {
        if cardinalities.is_empty() || cardinalities.contains(&0) {
            return Err(ChowLiuError::InvalidJoint(
                "every variable needs at least one outcome".into(),
            ));
        }
        let size: usize = cardinalities.iter().product();
        if probabilities.len() != size {
            return Err(ChowLiuError::InvalidJoint(format!(
                "{} probabilities for an outcome space of {size}",
                probabilities.len()
            )));
        }
        if let Some(p) = probabilities.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(ChowLiuError::InvalidJoint(format!("invalid probability {p}")));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(ChowLiuError::InvalidJoint(format!("probabilities sum to {total}")));
        }
        Ok(Self {
            cardinalities,
            probabilities,
        })
    }

    /// Normalizes nonnegative weights into a joint.
    pub fn from_weights(cardinalities: Vec<usize>, weights: &[f64]) -> Result<Self, ChowLiuError> {
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(ChowLiuError::InvalidJoint("weights must have positive mass".into()));
        }
        let mut probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        // push the rounding residue onto the largest cell so the sum is 1
        let residue = 1.0 - probs.iter().sum::<f64>();
        if let Some(max) = probs.iter_mut().max_by(|a, b| a.total_cmp(b)) {
            *max += residue;
        }
        Self::new(cardinalities, probs)
    }

    pub fn num_vars(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Decodes a flat index into per-variable outcomes.
    pub fn outcome(&self, mut flat: usize) -> Vec<usize> {
        let mut x = vec![0; self.num_vars()];
        for v in (0..self.num_vars()).rev() {
            x[v] = flat % self.cardinalities[v];
            flat /= self.cardinalities[v];
        }
        x
    }

    fn outcomes(&self) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(k, &p)| (self.outcome(k), p))
    }

    pub fn marginal(&self, i: usize) -> Vec<f64> {
        let mut m = vec![0.0; self.cardinalities[i]];
        for (x, p) in self.outcomes() {
            m[x[i]] += p;
        }
        m
    }

    /// `pair[a][b] = P(X_i = a, X_j = b)`.
    pub fn pair_marginal(&self, i: usize, j: usize) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.cardinalities[j]]; self.cardinalities[i]];
        for (x, p) in self.outcomes() {
            m[x[i]][x[j]] += p;
        }
        m
    }
}

/// Mutual information in nats of a two-way table; zero cells contribute 0.
pub fn mutual_information_table(pair: &[Vec<f64>]) -> f64 {
    let pi: Vec<f64> = pair.iter().map(|row| row.iter().sum()).collect();
    let cols = pair.first().map_or(0, Vec::len);
    let pj: Vec<f64> = (0..cols).map(|b| pair.iter().map(|row| row[b]).sum()).collect();
    let mut mi = 0.0;
    for (a, row) in pair.iter().enumerate() {
        for (b, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (pi[a] * pj[b])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// `I(X_i; X_j)` in nats. Symmetric by construction.
pub fn pairwise_mutual_information(joint: &DiscreteJoint, i: usize, j: usize) -> f64 {
    assert!(i != j, "mutual information of a variable with itself");
    let (lo, hi) = (i.min(j), i.max(j));
    mutual_information_table(&joint.pair_marginal(lo, hi))
}

/// MI matrix with a zero diagonal.
pub fn mutual_information_matrix(joint: &DiscreteJoint) -> SimilarityMatrix {
    SimilarityMatrix::from_pairs(joint.num_vars(), MatrixKind::Custom, |i, j| {
        pairwise_mutual_information(joint, i, j)
    })
}

/// Maximum-MI spanning tree over the joint's variables, rooted at 0.
pub fn chow_liu_tree(joint: &DiscreteJoint) -> DependencyTree {
    max_spanning_tree(&mutual_information_matrix(joint)).with_root(0)
}

/// `P_T(x) = p(x_root) * prod p(x_child | x_parent)` for every outcome.
pub fn tree_distribution(joint: &DiscreteJoint, tree: &DependencyTree) -> Vec<f64> {
    let tree = match tree.root {
        Some(_) => tree.clone(),
        None => tree.clone().with_root(0),
    };
    let (parent, _) = parents_and_depths(&tree);
    let singles: Vec<Vec<f64>> = (0..joint.num_vars()).map(|v| joint.marginal(v)).collect();
    let pairs: Vec<Option<Vec<Vec<f64>>>> = parent
        .iter()
        .enumerate()
        .map(|(v, p)| p.map(|p| joint.pair_marginal(p, v)))
        .collect();
    (0..joint.probabilities.len())
        .map(|k| {
            let x = joint.outcome(k);
            let mut q = 1.0;
            for v in 0..joint.num_vars() {
                q *= match (parent[v], &pairs[v]) {
                    (Some(p), Some(pair)) => {
                        let pp = singles[p][x[p]];
                        if pp == 0.0 {
                            0.0
                        } else {
                            pair[x[p]][x[v]] / pp
                        }
                    }
                    _ => singles[v][x[v]],
                };
            }
            q
        })
        .collect()
}

/// `KL(P || P_T)` in nats.
pub fn tree_distribution_kl(joint: &DiscreteJoint, tree: &DependencyTree) -> Result<f64, ChowLiuError> {
    if tree.n != joint.num_vars() || !tree.is_spanning_tree() {
        return Err(ChowLiuError::TreeMismatch {
            vars: joint.num_vars(),
            nodes: tree.n,
        });
    }
    let q = tree_distribution(joint, tree);
    let mut kl = 0.0;
    for (k, (&p, &qk)) in joint.probabilities.iter().zip(&q).enumerate() {
        if p == 0.0 {
            continue;
        }
        if qk == 0.0 {
            return Err(ChowLiuError::UndefinedKl {
                outcome: joint.outcome(k),
            });
        }
        kl += p * (p / qk).ln();
    }
    Ok(kl.max(0.0))
}
