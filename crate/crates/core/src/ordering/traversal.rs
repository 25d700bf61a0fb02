use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mst::DependencyTree;
use crate::similarity::SimilarityMatrix;

/// Index of the highest query score; ties go to the lowest index.
pub fn select_root(query_scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in query_scores.iter().enumerate() {
        match best {
            Some((_, b)) if s.total_cmp(&b).is_le() => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// Breadth-first order of `tree` from its root.
///
/// Children of one parent are visited by descending edge weight to that
/// parent, ties by ascending index. Panics if the root is unset.
pub fn bfs_order(tree: &DependencyTree) -> Vec<usize> {
    let root = tree.root.expect("bfs_order needs a rooted tree");
    if tree.n == 0 {
        return Vec::new();
    }
    let mut adj = tree.adjacency();
    for list in &mut adj {
        list.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    }
    let mut seen = vec![false; tree.n];
    let mut order = Vec::with_capacity(tree.n);
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &(u, _) in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    order
}

/// `parent[v]` and `depth[v]` of a rooted tree, root has no parent.
pub fn parents_and_depths(tree: &DependencyTree) -> (Vec<Option<usize>>, Vec<usize>) {
    let root = tree.root.expect("needs a rooted tree");
    let adj = tree.adjacency();
    let mut parent = vec![None; tree.n];
    let mut depth = vec![0; tree.n];
    let mut seen = vec![false; tree.n];
    let mut stack = vec![root];
    seen[root] = true;
    while let Some(v) = stack.pop() {
        for &(u, _) in &adj[v] {
            if !seen[u] {
                seen[u] = true;
                parent[u] = Some(v);
                depth[u] = depth[v] + 1;
                stack.push(u);
            }
        }
    }
    (parent, depth)
}

/// Greedy nearest-neighbour walk: always step to the unvisited chunk most
/// similar to the current one.
pub fn dfs_greedy_order(matrix: &SimilarityMatrix, root: usize) -> Vec<usize> {
    let n = matrix.n();
    if n == 0 {
        return Vec::new();
    }
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut current = root;
    visited[root] = true;
    order.push(root);
    while order.len() < n {
        let mut next: Option<(usize, f64)> = None;
        for j in (0..n).filter(|&j| !visited[j]) {
            let w = matrix.get(current, j);
            match next {
                Some((_, b)) if w.total_cmp(&b).is_le() => {}
                _ => next = Some((j, w)),
            }
        }
        let (j, _) = next.expect("an unvisited node remains");
        visited[j] = true;
        order.push(j);
        current = j;
    }
    order
}

/// Chunks by descending query score, ties by ascending index.
pub fn dense_order(query_scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..query_scores.len()).collect();
    order.sort_by(|&a, &b| query_scores[b].total_cmp(&query_scores[a]).then(a.cmp(&b)));
    order
}

pub fn default_order(n: usize) -> Vec<usize> {
    (0..n).collect()
}

pub fn random_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order = default_order(n);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// True iff `order` is a permutation of `0..n`.
pub fn is_permutation(order: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    order.len() == n && order.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}
