//! Fill-reducing orderings for the envelope factorization.

use std::collections::VecDeque;

use super::sparse::SparseSym;

pub(crate) fn adjacency(q: &SparseSym) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); q.n()];
    for (i, j, _) in q.entries() {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

/// Eccentricity-based start node in the component containing `seed`.
fn pseudo_peripheral(adj: &[Vec<usize>], seed: usize) -> usize {
    let n = adj.len();
    let mut mark = vec![usize::MAX; n];
    let mut start = seed;
    let mut best_depth = 0;
    for round in 0..8 {
        let (depth, last_level) = eccentricity(adj, start, &mut mark, round);
        if round > 0 && depth <= best_depth {
            break;
        }
        best_depth = depth;
        let next = *last_level
            .iter()
            .min_by_key(|&&v| (adj[v].len(), v))
            .unwrap();
        if next == start {
            break;
        }
        start = next;
    }
    start
}

fn eccentricity(
    adj: &[Vec<usize>],
    start: usize,
    mark: &mut [usize],
    stamp: usize,
) -> (usize, Vec<usize>) {
    let mut frontier = vec![start];
    mark[start] = stamp;
    let mut depth = 0;
    loop {
        let mut next = Vec::new();
        for &v in &frontier {
            for &w in &adj[v] {
                if mark[w] != stamp {
                    mark[w] = stamp;
                    next.push(w);
                }
            }
        }
        if next.is_empty() {
            return (depth, frontier);
        }
        depth += 1;
        frontier = next;
    }
}

/// Reverse Cuthill–McKee. Returns `perm` with `perm[new] = old`.
pub(crate) fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::new();
    let mut nbrs = Vec::new();
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(adj, seed);
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            nbrs.clear();
            nbrs.extend(adj[v].iter().copied().filter(|&w| !visited[w]));
            nbrs.sort_unstable_by_key(|&w| (adj[w].len(), w));
            for &w in &nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

/// First column of each row's envelope under `iperm` (`iperm[old] = new`).
pub(crate) fn envelope_first(q: &SparseSym, iperm: &[usize]) -> Vec<usize> {
    let mut first: Vec<usize> = (0..q.n()).collect();
    for (i, j, _) in q.entries() {
        let (a, b) = (iperm[i], iperm[j]);
        let (r, c) = if a >= b { (a, b) } else { (b, a) };
        if c < first[r] {
            first[r] = c;
        }
    }
    first
}

/// `sum_r (r - first[r])`.
pub(crate) fn envelope_size(first: &[usize]) -> usize {
    first.iter().enumerate().map(|(r, &f)| r - f).sum()
}

pub(crate) fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    inv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmrf::{car_precision, Lattice2D};

    #[test]
    fn rcm_is_a_permutation_and_shrinks_lattice_envelope() {
        // u-block then v-block ordering has a wide envelope; RCM should not be worse.
        let q = car_precision(&Lattice2D::new(7, 9).unwrap(), 1.0).unwrap();
        let adj = adjacency(&q);
        let perm = reverse_cuthill_mckee(&adj);
        let mut seen = perm.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..63).collect::<Vec<_>>());
        let natural = envelope_size(&envelope_first(&q, &(0..63).collect::<Vec<_>>()));
        let rcm = envelope_size(&envelope_first(&q, &invert(&perm)));
        assert!(rcm <= natural, "rcm {rcm} natural {natural}");
    }

    #[test]
    fn handles_disconnected_graphs() {
        let q = SparseSym::identity(5);
        let perm = reverse_cuthill_mckee(&adjacency(&q));
        assert_eq!(perm.len(), 5);
    }
}
