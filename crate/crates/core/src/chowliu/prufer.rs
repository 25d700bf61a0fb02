use super::ChowLiuError;

pub const MAX_ENUMERATED_NODES: usize = 7;

/// Decodes a Prüfer sequence over `0..n` into sorted tree edges.
pub fn prufer_decode(seq: &[usize], n: usize) -> Vec<(usize, usize)> {
    debug_assert_eq!(seq.len() + 2, n);
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    for &s in seq {
        let leaf = (0..n).find(|&v| degree[v] == 1).expect("a leaf always exists");
        edges.push((leaf.min(s), leaf.max(s)));
        degree[leaf] -= 1;
        degree[s] -= 1;
    }
    let mut last = (0..n).filter(|&v| degree[v] == 1);
    let (u, v) = (last.next().unwrap(), last.next().unwrap());
    edges.push((u, v));
    edges.sort_unstable();
    edges
}

/// Every labeled spanning tree on `n` nodes, as sorted edge lists.
pub fn enumerate_spanning_trees(n: usize) -> Result<Vec<Vec<(usize, usize)>>, ChowLiuError> {
    if n > MAX_ENUMERATED_NODES {
        return Err(ChowLiuError::TooLarge {
            n,
            max: MAX_ENUMERATED_NODES,
        });
    }
    match n {
        0 => return Err(ChowLiuError::TooSmall { n }),
        1 => return Ok(vec![Vec::new()]),
        2 => return Ok(vec![vec![(0, 1)]]),
        _ => {}
    }
    let len = n - 2;
    let total = n.pow(len as u32);
    let mut seq = vec![0usize; len];
    let mut out = Vec::with_capacity(total);
    for _ in 0..total {
        out.push(prufer_decode(&seq, n));
        // odometer increment
        for d in seq.iter_mut().rev() {
            *d += 1;
            if *d < n {
                break;
            }
            *d = 0;
        }
    }
    Ok(out)
}
