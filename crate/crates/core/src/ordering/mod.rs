//! Chunk orderings: the tree-based order and the baselines it is compared to.

mod mst;
mod traversal;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

pub use mst::{max_spanning_tree, DependencyTree, TreeEdge, UnionFind};
pub use traversal::{
    bfs_order, default_order, dense_order, dfs_greedy_order, is_permutation, parents_and_depths, random_order,
    select_root,
};

use crate::similarity::SimilarityMatrix;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OrderingError {
    #[error("cannot order an empty chunk list")]
    Empty,
    #[error("{scores} query scores for {chunks} chunks")]
    ScoreLengthMismatch { scores: usize, chunks: usize },
    #[error("unknown strategy {0:?} (expected default, dense, dfs-greedy, cl-order or random)")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Default,
    Dense,
    DfsGreedy,
    ClOrder,
    Random,
}

impl Strategy {
    /// Report order.
    pub const ALL: [Strategy; 5] = [
        Strategy::Default,
        Strategy::Dense,
        Strategy::DfsGreedy,
        Strategy::ClOrder,
        Strategy::Random,
    ];

    /// The set `--strategy all` expands to.
    pub const COMPARED: [Strategy; 4] = [
        Strategy::Default,
        Strategy::Dense,
        Strategy::DfsGreedy,
        Strategy::ClOrder,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Default => "default",
            Strategy::Dense => "dense",
            Strategy::DfsGreedy => "dfs-greedy",
            Strategy::ClOrder => "cl-order",
            Strategy::Random => "random",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = OrderingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| OrderingError::UnknownStrategy(s.to_owned()))
    }
}

/// A visiting order for one query, with the tree it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Ordering {
    pub strategy: Strategy,
    pub order: Vec<usize>,
    /// Always the maximum spanning tree rooted at the query-selected chunk,
    /// so dumps are comparable across strategies.
    pub tree: DependencyTree,
}

impl Ordering {
    pub fn root(&self) -> usize {
        self.tree.root.expect("planned trees are rooted")
    }

    /// `{"strategy","root","edges":[[i,j,w],..],"order"}`
    pub fn to_dump(&self) -> serde_json::Value {
        let edges: Vec<_> = self.tree.edges.iter().map(|e| json!([e.a, e.b, e.weight])).collect();
        json!({
            "strategy": self.strategy.as_str(),
            "root": self.root(),
            "edges": edges,
            "order": self.order,
        })
    }

    /// Indented tree, children in traversal order; `labels[i]` names chunk `i`.
    pub fn render_tree(&self, labels: &[String]) -> String {
        let (parent, _) = parents_and_depths(&self.tree);
        let bfs = bfs_order(&self.tree);
        let mut children = vec![Vec::new(); self.tree.n];
        for &v in &bfs {
            if let Some(p) = parent[v] {
                children[p].push(v);
            }
        }
        let weight = |a: usize, b: usize| {
            self.tree
                .edges
                .iter()
                .find(|e| (e.a, e.b) == (a.min(b), a.max(b)))
                .map_or(0.0, |e| e.weight)
        };
        let mut out = String::new();
        let mut stack = vec![(self.root(), 0usize)];
        while let Some((v, depth)) = stack.pop() {
            let label = labels.get(v).map_or_else(|| v.to_string(), Clone::clone);
            match parent[v] {
                Some(p) => out.push_str(&format!("{}{label} ({:.4})\n", "  ".repeat(depth), weight(p, v))),
                None => out.push_str(&format!("{label}\n")),
            }
            for &c in children[v].iter().rev() {
                stack.push((c, depth + 1));
            }
        }
        out
    }
}

/// Produces the order for `strategy`. `seed` only matters for `Random`.
pub fn plan_ordering(
    strategy: Strategy,
    matrix: &SimilarityMatrix,
    query_scores: &[f64],
    seed: u64,
) -> Result<Ordering, OrderingError> {
    let n = matrix.n();
    if n == 0 {
        return Err(OrderingError::Empty);
    }
    if query_scores.len() != n {
        return Err(OrderingError::ScoreLengthMismatch {
            scores: query_scores.len(),
            chunks: n,
        });
    }
    let root = select_root(query_scores).expect("non-empty scores");
    let tree = max_spanning_tree(matrix).with_root(root);
    let order = match strategy {
        Strategy::Default => default_order(n),
        Strategy::Dense => dense_order(query_scores),
        Strategy::DfsGreedy => dfs_greedy_order(matrix, root),
        Strategy::ClOrder => bfs_order(&tree),
        Strategy::Random => random_order(n, seed),
    };
    debug_assert!(is_permutation(&order, n));
    Ok(Ordering { strategy, order, tree })
}
