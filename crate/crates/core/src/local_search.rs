//! Component-based neighborhood search over size-K removal sets.
//!
//! Each iteration samples a residual component with probability
//! proportional to its pair count, moves its least-moved node `u` into the
//! removal set, and hands back the removed node `v` whose return costs the
//! least. Node weights count how often a node took part in a move and break
//! ties toward rarely moved nodes. The exchange is always applied, so the
//! current set walks through worse solutions while the best one is kept;
//! the search stops after `max_no_improve` iterations without a new best.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{connected_components, pairs, ComponentPartition, Graph, Solution};

pub const DEFAULT_MAX_NO_IMPROVE: usize = 1000;

/// Search state between iterations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CbnsState {
    pub current: Vec<usize>,
    pub current_f: u64,
    pub best: Vec<usize>,
    pub best_f: u64,
    pub weights: Vec<u64>,
    pub no_improve: usize,
}

/// Result of a run together with the best objective after every iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CbnsRun {
    pub solution: Solution,
    pub trace: Vec<u64>,
    pub iterations: usize,
}

pub fn cbns<R: Rng>(g: &Graph, initial: &Solution, max_no_improve: usize, rng: &mut R) -> Result<Solution> {
    Ok(cbns_traced(g, initial, max_no_improve, rng)?.solution)
}

pub fn cbns_traced<R: Rng>(g: &Graph, initial: &Solution, max_no_improve: usize, rng: &mut R) -> Result<CbnsRun> {
    let g = g.full();
    let k = initial.removed.len();
    if k > g.n() {
        return Err(Error::BudgetTooLarge { k, n: g.n() });
    }
    let start = g.remove_nodes(&initial.removed)?;
    let f0 = start.objective();
    let mut state = CbnsState {
        current: initial.removed.clone(),
        current_f: f0,
        best: initial.removed.clone(),
        best_f: f0,
        weights: vec![0; g.n()],
        no_improve: 0,
    };
    let mut residual = start;
    let mut trace = Vec::new();
    let mut iterations = 0;
    while k > 0 && state.best_f > 0 && state.no_improve < max_no_improve {
        iterations += 1;
        step(&mut residual, &mut state, rng)?;
        trace.push(state.best_f);
    }
    Ok(CbnsRun {
        solution: Solution::evaluate(&g, state.best)?,
        trace,
        iterations,
    })
}

/// Lowest-weight candidate, uniform among ties.
fn least_moved<R: Rng>(candidates: impl Iterator<Item = (usize, u64)>, rng: &mut R) -> Option<(usize, u64)> {
    let mut best: Option<(usize, u64)> = None;
    let mut ties = 0u32;
    for c in candidates {
        match best {
            Some(b) if c.1 > b.1 => {}
            Some(b) if c.1 == b.1 => {
                ties += 1;
                if rng.gen_range(0..ties + 1) == 0 {
                    best = Some(c);
                }
            }
            _ => {
                best = Some(c);
                ties = 0;
            }
        }
    }
    best
}

fn sample_component<R: Rng>(parts: &ComponentPartition, rng: &mut R) -> usize {
    let total: u64 = parts.sizes.iter().map(|&s| pairs(s)).sum();
    let mut x = rng.gen_range(0..total);
    for (c, &s) in parts.sizes.iter().enumerate() {
        let p = pairs(s);
        if x < p {
            return c;
        }
        x -= p;
    }
    unreachable!("total pair count covers every component")
}

/// Objective change from putting removed node `v` back into `residual`.
fn return_cost(g: &Graph, parts: &ComponentPartition, v: usize, seen: &mut Vec<usize>) -> i64 {
    seen.clear();
    let mut merged = 1;
    let mut before = 0;
    for &w in g.neighbors(v) {
        if let Some(c) = parts.component_id[w] {
            if !seen.contains(&c) {
                seen.push(c);
                merged += parts.sizes[c];
                before += pairs(parts.sizes[c]);
            }
        }
    }
    pairs(merged) as i64 - before as i64
}

fn step<R: Rng>(residual: &mut Graph, state: &mut CbnsState, rng: &mut R) -> Result<()> {
    let parts = connected_components(residual);
    let c = sample_component(&parts, rng);
    let (u, _) = least_moved(
        (0..residual.n())
            .filter(|&v| parts.component_id[v] == Some(c))
            .map(|v| (v, state.weights[v])),
        rng,
    )
    .expect("sampled component has at least two nodes");

    residual.remove_node(u)?;
    let after_u = connected_components(residual);
    let f_u = after_u.objective();
    let mut seen = Vec::new();
    let costs: Vec<(usize, i64)> = state
        .current
        .iter()
        .map(|&v| (v, return_cost(residual, &after_u, v, &mut seen)))
        .collect();
    let min_cost = costs.iter().map(|&(_, d)| d).min().expect("removal set is non-empty");
    let (v, _) = least_moved(
        costs.iter().filter(|&&(_, d)| d == min_cost).map(|&(v, _)| (v, state.weights[v])),
        rng,
    )
    .expect("at least one minimizer");

    state.weights[u] += 1;
    state.weights[v] += 1;
    residual.restore_node(v)?;
    let slot = state.current.iter().position(|&x| x == v).expect("v is removed");
    state.current[slot] = u;
    state.current_f = (f_u as i64 + min_cost) as u64;
    if state.current_f < state.best_f {
        state.best_f = state.current_f;
        state.best = state.current.clone();
        state.no_improve = 0;
    } else {
        state.no_improve += 1;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::rand as rand_removal;
    use crate::graph::generators::gen_er;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path(n: usize) -> Graph {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::simple(n, &edges)
    }

    #[test]
    fn optimal_start_on_p5_is_kept() {
        let g = path(5);
        let init = Solution::evaluate(&g, vec![2]).unwrap();
        assert_eq!(init.objective, 2);
        let out = cbns(&g, &init, 100, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.objective, 2);
        assert_eq!(out.removed.len(), 1);
    }

    #[test]
    fn poor_start_on_p5_reaches_middle() {
        let g = path(5);
        let init = Solution::evaluate(&g, vec![0]).unwrap();
        let out = cbns(&g, &init, 100, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.objective, 2);
        assert_eq!(out.removed, vec![2]);
    }

    #[test]
    fn never_worse_and_trace_non_increasing() {
        for seed in 0..10 {
            let g = gen_er(40, 0.08, seed).unwrap();
            let init = rand_removal(&g, 4, seed).unwrap();
            let run = cbns_traced(&g, &init, 200, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert!(run.solution.objective <= init.objective);
            assert_eq!(run.solution.removed.len(), 4);
            assert!(run.trace.windows(2).all(|w| w[1] <= w[0]));
            let mut sorted = run.solution.removed.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 4);
        }
    }

    #[test]
    fn return_cost_matches_recount() {
        let g = gen_er(30, 0.1, 4).unwrap();
        let removed = [1, 5, 9, 13];
        let residual = g.remove_nodes(&removed).unwrap();
        let parts = connected_components(&residual);
        let f = residual.objective();
        let mut seen = Vec::new();
        for &v in &removed {
            let mut back = residual.clone();
            back.restore_node(v).unwrap();
            let d = return_cost(&residual, &parts, v, &mut seen);
            assert_eq!(f as i64 + d, back.objective() as i64);
        }
    }

    #[test]
    fn empty_budget_and_zero_objective_stop_at_once() {
        let g = path(4);
        let init = Solution::evaluate(&g, vec![]).unwrap();
        let run = cbns_traced(&g, &init, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(run.iterations, 0);
        assert_eq!(run.solution.objective, 6);
        let init = Solution::evaluate(&g, vec![1, 2]).unwrap();
        let run = cbns_traced(&g, &init, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(run.iterations, 0);
    }
}
