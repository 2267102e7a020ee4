//! Construction heuristics: adaptive highest degree, collective influence,
//! and uniform random removal. All of them solve on the full topology of
//! the input graph.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Solution};

pub const DEFAULT_CI_RADIUS: usize = 2;

fn check_budget(g: &Graph, k: usize) -> Result<()> {
    if k > g.n() {
        return Err(Error::BudgetTooLarge { k, n: g.n() });
    }
    Ok(())
}

/// Lowest id among the alive nodes with the largest score.
fn best_alive(g: &Graph, score: &[u64]) -> usize {
    let mut best = usize::MAX;
    for v in 0..g.n() {
        if g.is_alive(v) && (best == usize::MAX || score[v] > score[best]) {
            best = v;
        }
    }
    best
}

/// Removes the current highest-degree node `k` times, lowest id on ties.
pub fn hda(g: &Graph, k: usize) -> Result<Solution> {
    check_budget(g, k)?;
    let mut residual = g.full();
    let mut degree: Vec<u64> = (0..g.n()).map(|v| residual.degree(v) as u64).collect();
    let mut removed = Vec::with_capacity(k);
    for _ in 0..k {
        let v = best_alive(&residual, &degree);
        residual.remove_node(v)?;
        for &u in g.neighbors(v) {
            if residual.is_alive(u) {
                degree[u] -= 1;
            }
        }
        removed.push(v);
    }
    Solution::evaluate(g, removed)
}

/// Alive nodes at shortest-path distance at most `radius` from `v`, with
/// their distances.
fn ball(g: &Graph, v: usize, radius: usize, dist: &mut [usize], out: &mut Vec<usize>) {
    out.clear();
    dist[v] = 0;
    out.push(v);
    let mut queue = VecDeque::from([v]);
    while let Some(u) = queue.pop_front() {
        if dist[u] == radius {
            continue;
        }
        for w in g.alive_neighbors(u) {
            if dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                out.push(w);
                queue.push_back(w);
            }
        }
    }
}

/// `(deg(v) - 1) * sum of (deg(u) - 1)` over alive `u` at distance exactly
/// `radius` from `v` in the residual graph. Zero for removed nodes.
pub fn ci_scores(g: &Graph, radius: usize) -> Result<Vec<u64>> {
    if radius < 1 {
        return Err(Error::InvalidParameter("CI radius must be at least 1".into()));
    }
    let mut dist = vec![usize::MAX; g.n()];
    let mut seen = Vec::new();
    Ok((0..g.n())
        .map(|v| {
            if !g.is_alive(v) {
                return 0;
            }
            ci_one(g, v, radius, &mut dist, &mut seen)
        })
        .collect())
}

fn ci_one(g: &Graph, v: usize, radius: usize, dist: &mut [usize], seen: &mut Vec<usize>) -> u64 {
    let own = g.degree(v).saturating_sub(1) as u64;
    if own == 0 {
        return 0;
    }
    ball(g, v, radius, dist, seen);
    let mut frontier = 0u64;
    for &u in seen.iter() {
        if dist[u] == radius {
            frontier += g.degree(u).saturating_sub(1) as u64;
        }
        dist[u] = usize::MAX;
    }
    own * frontier
}

/// Removes the current highest-CI node `k` times, lowest id on ties. After
/// each removal only nodes within `radius + 1` of the removed node are
/// rescored.
pub fn ci(g: &Graph, k: usize, radius: usize) -> Result<Solution> {
    check_budget(g, k)?;
    let mut residual = g.full();
    let mut score = ci_scores(&residual, radius)?;
    let mut dist = vec![usize::MAX; g.n()];
    let mut seen = Vec::new();
    let mut affected = Vec::new();
    let mut removed = Vec::with_capacity(k);
    for _ in 0..k {
        let v = best_alive(&residual, &score);
        ball(&residual, v, radius + 1, &mut dist, &mut affected);
        for &u in &affected {
            dist[u] = usize::MAX;
        }
        residual.remove_node(v)?;
        score[v] = 0;
        for &u in &affected {
            if u != v {
                score[u] = ci_one(&residual, u, radius, &mut dist, &mut seen);
            }
        }
        removed.push(v);
    }
    Solution::evaluate(g, removed)
}

/// The first `k` nodes of a seeded uniform shuffle.
pub fn rand(g: &Graph, k: usize, seed: u64) -> Result<Solution> {
    check_budget(g, k)?;
    let mut nodes: Vec<usize> = (0..g.n()).collect();
    nodes.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    nodes.truncate(k);
    Solution::evaluate(g, nodes)
}
