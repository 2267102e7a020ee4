#![allow(dead_code)]

use std::collections::VecDeque;

use critnet::graph::generators::{gen_ba, gen_er, gen_ws};
use critnet::Graph;
use rand::Rng;

/// ER, BA or WS graph with `n` nodes, chosen by `rng`.
pub fn mixed_graph<R: Rng>(rng: &mut R, n_min: usize, n_max: usize) -> Graph {
    let n = rng.gen_range(n_min..=n_max);
    let seed = rng.gen();
    match rng.gen_range(0..3) {
        0 => gen_er(n, rng.gen_range(0.05..0.4), seed).unwrap(),
        1 => gen_ba(n, rng.gen_range(1..=2.min(n - 1)), seed).unwrap(),
        _ if n >= 5 => gen_ws(n, 4, rng.gen_range(0.0..0.5), seed).unwrap(),
        _ => gen_er(n, 0.5, seed).unwrap(),
    }
}

/// Adjacency lists of the whole topology, built from the edge list only.
pub fn adjacency(g: &Graph) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); g.n()];
    for &(u, v) in g.edges() {
        adj[u].push(v);
        adj[v].push(u);
    }
    adj
}

/// BFS distances from `s` avoiding `dead` nodes; `usize::MAX` if unreachable.
pub fn bfs(adj: &[Vec<usize>], dead: &[bool], s: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    dist[s] = 0;
    let mut q = VecDeque::from([s]);
    while let Some(u) = q.pop_front() {
        for &w in &adj[u] {
            if !dead[w] && dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                q.push_back(w);
            }
        }
    }
    dist
}

/// Unordered pairs of surviving nodes joined by a path, counted one source at
/// a time.
pub fn reachable_pairs(g: &Graph, removed: &[usize]) -> u64 {
    let adj = adjacency(g);
    let mut dead = vec![false; g.n()];
    for &v in removed {
        dead[v] = true;
    }
    let mut ordered = 0u64;
    for s in 0..g.n() {
        if dead[s] {
            continue;
        }
        let d = bfs(&adj, &dead, s);
        ordered += d.iter().filter(|&&x| x != usize::MAX && x > 0).count() as u64;
    }
    ordered / 2
}

/// Calls `visit` on every `k`-subset of `0..n` in lexicographic order.
pub fn for_each_subset(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Exact optimum of the critical node problem by enumeration.
pub fn brute_optimum(g: &Graph, k: usize) -> u64 {
    let mut best = u64::MAX;
    for_each_subset(g.n(), k, |s| best = best.min(g.remove_nodes(s).unwrap().objective()));
    best
}

/// `g` with node `v` renamed to `perm[v]`.
pub fn permute(g: &Graph, perm: &[usize]) -> Graph {
    let edges: Vec<_> = g.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
    Graph::simple(g.n(), &edges)
}

pub fn path(n: usize) -> Graph {
    let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
    Graph::simple(n, &edges)
}
