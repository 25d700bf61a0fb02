use std::cmp::Ordering as CmpOrdering;

use serde::{Deserialize, Serialize};

use crate::similarity::SimilarityMatrix;

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Merges the sets of `a` and `b`; false if they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// An undirected tree edge, stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

impl TreeEdge {
    pub fn new(i: usize, j: usize, weight: f64) -> Self {
        Self {
            a: i.min(j),
            b: i.max(j),
            weight,
        }
    }

    pub fn other(&self, node: usize) -> usize {
        if node == self.a {
            self.b
        } else {
            self.a
        }
    }
}

/// A spanning tree over chunk indices with an optional traversal root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DependencyTree {
    pub n: usize,
    pub edges: Vec<TreeEdge>,
    pub root: Option<usize>,
}

impl DependencyTree {
    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    pub fn with_root(mut self, root: usize) -> Self {
        assert!(root < self.n, "root {root} out of range for {} nodes", self.n);
        self.root = Some(root);
        self
    }

    /// Edge endpoints as sorted pairs, for set comparisons.
    pub fn edge_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<_> = self.edges.iter().map(|e| (e.a, e.b)).collect();
        pairs.sort_unstable();
        pairs
    }

    /// `adjacency[v]` lists `(neighbour, weight)`.
    pub fn adjacency(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.edges {
            adj[e.a].push((e.b, e.weight));
            adj[e.b].push((e.a, e.weight));
        }
        adj
    }

    /// True iff the edges connect all `n` nodes without a cycle.
    pub fn is_spanning_tree(&self) -> bool {
        if self.edges.len() + 1 != self.n.max(1) {
            return false;
        }
        let mut uf = UnionFind::new(self.n);
        self.edges
            .iter()
            .all(|e| e.a < self.n && e.b < self.n && uf.union(e.a, e.b))
    }
}

/// Heavier first; among equal weights, lexicographically smaller pair first.
fn edge_order(x: &TreeEdge, y: &TreeEdge) -> CmpOrdering {
    y.weight.total_cmp(&x.weight).then_with(|| (x.a, x.b).cmp(&(y.a, y.b)))
}

/// Maximum-weight spanning tree of the complete graph weighted by `matrix`.
///
/// Kruskal over all `n(n-1)/2` pairs. The edge order is total, so the result
/// is fully deterministic under ties. The root is left unset.
pub fn max_spanning_tree(matrix: &SimilarityMatrix) -> DependencyTree {
    let n = matrix.n();
    let mut candidates: Vec<TreeEdge> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .map(|(i, j)| TreeEdge::new(i, j, matrix.get(i, j)))
        .collect();
    candidates.sort_unstable_by(edge_order);

    let mut uf = UnionFind::new(n);
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    for e in candidates {
        if uf.union(e.a, e.b) {
            edges.push(e);
            if edges.len() + 1 == n {
                break;
            }
        }
    }
    DependencyTree { n, edges, root: None }
}
