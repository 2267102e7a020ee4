//! Random graph models used for training data.
//!
//! Every generator is deterministic for a fixed seed (ChaCha8 stream).

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Graph;
use crate::error::{Error, Result};

fn check_prob(p: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("{what} = {p} is outside [0, 1]")));
    }
    Ok(())
}

/// Barabási–Albert preferential attachment.
///
/// Starts from a star on `m_attach + 1` nodes (node 0 is the hub). Each later
/// node attaches to `m_attach` distinct existing nodes chosen with
/// probability proportional to degree, so the edge count is
/// `m_attach * (n - m_attach)`.
pub fn gen_ba(n: usize, m_attach: usize, seed: u64) -> Result<Graph> {
    if m_attach < 1 || n < m_attach + 1 {
        return Err(Error::InvalidParameter(format!(
            "BA needs 1 <= m_attach < n, got n={n} m_attach={m_attach}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::with_capacity(m_attach * (n - m_attach));
    // one entry per edge endpoint, so uniform sampling is degree-proportional
    let mut endpoints = Vec::with_capacity(2 * m_attach * (n - m_attach));
    for leaf in 1..=m_attach {
        edges.push((0, leaf));
        endpoints.extend([0, leaf]);
    }
    let mut targets = Vec::with_capacity(m_attach);
    for v in (m_attach + 1)..n {
        targets.clear();
        while targets.len() < m_attach {
            let t = endpoints[rng.gen_range(0..endpoints.len())];
            if !targets.contains(&t) {
                targets.push(t);
            }
        }
        for &t in &targets {
            edges.push((t, v));
            endpoints.extend([t, v]);
        }
    }
    Ok(Graph::simple(n, &edges))
}

/// Watts–Strogatz small world: a ring lattice where each node links to its
/// `k_ring / 2` nearest neighbors on each side, then every lattice edge
/// `(u, u + j)` is rewired with probability `p_rewire` to a uniformly chosen
/// endpoint that keeps the graph simple.
pub fn gen_ws(n: usize, k_ring: usize, p_rewire: f64, seed: u64) -> Result<Graph> {
    if !k_ring.is_multiple_of(2) || k_ring >= n {
        return Err(Error::InvalidParameter(format!(
            "WS needs an even k_ring < n, got n={n} k_ring={k_ring}"
        )));
    }
    check_prob(p_rewire, "p_rewire")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let connect = |adj: &mut Vec<Vec<usize>>, a: usize, b: usize| {
        adj[a].push(b);
        adj[b].push(a);
    };
    let disconnect = |adj: &mut Vec<Vec<usize>>, a: usize, b: usize| {
        adj[a].retain(|&x| x != b);
        adj[b].retain(|&x| x != a);
    };
    for j in 1..=k_ring / 2 {
        for u in 0..n {
            connect(&mut adj, u, (u + j) % n);
        }
    }
    for j in 1..=k_ring / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            if rng.gen::<f64>() >= p_rewire {
                continue;
            }
            // saturated node: no legal new endpoint
            if adj[u].len() >= n - 1 {
                continue;
            }
            let w = loop {
                let w = rng.gen_range(0..n);
                if w != u && !adj[u].contains(&w) {
                    break w;
                }
            };
            disconnect(&mut adj, u, v);
            connect(&mut adj, u, w);
        }
    }
    let mut edges = Vec::new();
    for (u, list) in adj.iter().enumerate() {
        for &v in list {
            if u < v {
                edges.push((u, v));
            }
        }
    }
    edges.sort_unstable();
    Ok(Graph::simple(n, &edges))
}

/// Erdős–Rényi G(n, p): each unordered pair is an edge independently.
pub fn gen_er(n: usize, p_edge: f64, seed: u64) -> Result<Graph> {
    check_prob(p_edge, "p_edge")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.gen::<f64>() < p_edge {
                edges.push((u, v));
            }
        }
    }
    Ok(Graph::simple(n, &edges))
}

/// The three synthetic families sampled during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    BarabasiAlbert,
    WattsStrogatz,
    ErdosRenyi,
}

impl Family {
    pub const ALL: [Family; 3] = [
        Family::BarabasiAlbert,
        Family::WattsStrogatz,
        Family::ErdosRenyi,
    ];
}

/// Draws one training graph: a uniformly chosen family, `n` uniform in
/// `[n_min, n_max]`, and family parameters BA m ∈ {2, 3}, WS (k=4, p=0.1),
/// ER with mean degree uniform in [3, 6].
pub fn sample_training_graph<R: Rng>(rng: &mut R, n_min: usize, n_max: usize) -> Result<Graph> {
    if n_min < 5 || n_max < n_min {
        return Err(Error::InvalidParameter(format!(
            "training node range [{n_min}, {n_max}] must satisfy 5 <= min <= max"
        )));
    }
    let n = rng.gen_range(n_min..=n_max);
    let seed = rng.gen::<u64>();
    let family = *Family::ALL.choose(rng).expect("non-empty");
    match family {
        Family::BarabasiAlbert => gen_ba(n, rng.gen_range(2..=3), seed),
        Family::WattsStrogatz => gen_ws(n, 4, 0.1, seed),
        Family::ErdosRenyi => {
            let mean_degree = rng.gen_range(3.0..=6.0);
            gen_er(n, (mean_degree / (n - 1) as f64).min(1.0), seed)
        }
    }
}
