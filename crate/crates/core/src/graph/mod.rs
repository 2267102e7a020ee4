//! Undirected simple graphs with an alive mask, edge-list ingestion, and the
//! pairwise-connectivity objective.
//!
//! A [`Graph`] shares its topology behind an [`Arc`]; removing nodes only
//! clears bits in the per-graph alive mask, so residual graphs are cheap to
//! clone and snapshot.

pub mod generators;
mod union_find;

use std::collections::HashMap;
use std::collections::HashSet;
use std::collections::VecDeque;
use std::fmt::Write as _;
use std::sync::Arc;

pub use union_find::UnionFind;

use crate::error::{Error, Result};

#[derive(Debug)]
struct Topology {
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Graph {
    topo: Arc<Topology>,
    alive: Vec<bool>,
    alive_count: usize,
}

/// Number of unordered pairs inside a component of `size` nodes.
#[inline]
pub fn pairs(size: usize) -> u64 {
    let s = size as u64;
    s * s.saturating_sub(1) / 2
}

impl Graph {
    /// Builds a graph on nodes `0..n`. Self-loops and repeated edges are
    /// dropped; the second value counts them.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<(Self, usize)> {
        let mut adj = vec![Vec::new(); n];
        let mut seen = HashSet::with_capacity(edges.len());
        let mut kept = Vec::with_capacity(edges.len());
        let mut dropped = 0;
        for &(u, v) in edges {
            if u >= n {
                return Err(Error::NodeOutOfRange(u));
            }
            if v >= n {
                return Err(Error::NodeOutOfRange(v));
            }
            let key = (u.min(v), u.max(v));
            if u == v || !seen.insert(key) {
                dropped += 1;
                continue;
            }
            adj[u].push(v);
            adj[v].push(u);
            kept.push(key);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        let graph = Graph {
            topo: Arc::new(Topology { edges: kept, adj }),
            alive: vec![true; n],
            alive_count: n,
        };
        Ok((graph, dropped))
    }

    /// Builds a graph from edges already known to be simple.
    pub fn simple(n: usize, edges: &[(usize, usize)]) -> Self {
        Self::from_edges(n, edges).expect("edge endpoints in range").0
    }

    pub fn n(&self) -> usize {
        self.alive.len()
    }

    /// Edge count of the underlying (unreduced) graph.
    pub fn m(&self) -> usize {
        self.topo.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.topo.edges
    }

    /// All neighbors in the underlying graph, alive or not.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.topo.adj[v]
    }

    pub fn alive_neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.topo.adj[v].iter().copied().filter(|&u| self.alive[u])
    }

    /// Degree of `v` counting alive neighbors only.
    pub fn degree(&self, v: usize) -> usize {
        self.alive_neighbors(v).count()
    }

    pub fn is_alive(&self, v: usize) -> bool {
        self.alive[v]
    }

    pub fn alive_mask(&self) -> &[bool] {
        &self.alive
    }

    pub fn alive_count(&self) -> usize {
        self.alive_count
    }

    pub fn alive_nodes(&self) -> Vec<usize> {
        (0..self.n()).filter(|&v| self.alive[v]).collect()
    }

    pub fn removed_nodes(&self) -> Vec<usize> {
        (0..self.n()).filter(|&v| !self.alive[v]).collect()
    }

    /// Edges whose endpoints are both alive.
    pub fn alive_edge_count(&self) -> usize {
        self.topo
            .edges
            .iter()
            .filter(|&&(u, v)| self.alive[u] && self.alive[v])
            .count()
    }

    /// True when both graphs are views of the same topology.
    pub fn same_topology(&self, other: &Graph) -> bool {
        Arc::ptr_eq(&self.topo, &other.topo)
    }

    /// The same topology with all nodes alive.
    pub fn full(&self) -> Graph {
        self.with_alive(vec![true; self.n()])
    }

    /// The same topology with a caller-supplied alive mask.
    pub fn with_alive(&self, alive: Vec<bool>) -> Graph {
        assert_eq!(alive.len(), self.n(), "alive mask length");
        let alive_count = alive.iter().filter(|&&a| a).count();
        Graph {
            topo: Arc::clone(&self.topo),
            alive,
            alive_count,
        }
    }

    pub fn remove_node(&mut self, v: usize) -> Result<()> {
        if v >= self.n() {
            return Err(Error::NodeOutOfRange(v));
        }
        if !self.alive[v] {
            return Err(Error::DeadNode(v));
        }
        self.alive[v] = false;
        self.alive_count -= 1;
        Ok(())
    }

    /// Puts a removed node back. Used by local search moves.
    pub fn restore_node(&mut self, v: usize) -> Result<()> {
        if v >= self.n() {
            return Err(Error::NodeOutOfRange(v));
        }
        if self.alive[v] {
            return Err(Error::InvalidParameter(format!("node {v} is already alive")));
        }
        self.alive[v] = true;
        self.alive_count += 1;
        Ok(())
    }

    /// Residual graph with `nodes` removed; `self` is left untouched.
    pub fn remove_nodes(&self, nodes: &[usize]) -> Result<Graph> {
        let mut out = self.clone();
        for &v in nodes {
            out.remove_node(v)?;
        }
        Ok(out)
    }

    /// Pairwise connectivity of the current residual graph.
    pub fn objective(&self) -> u64 {
        let mut seen = vec![false; self.n()];
        let mut queue = VecDeque::new();
        let mut total = 0;
        for s in 0..self.n() {
            if !self.alive[s] || seen[s] {
                continue;
            }
            seen[s] = true;
            queue.push_back(s);
            let mut size = 0;
            while let Some(u) = queue.pop_front() {
                size += 1;
                for &w in &self.topo.adj[u] {
                    if self.alive[w] && !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
            total += pairs(size);
        }
        total
    }

    /// Writes the underlying graph as "u v" lines.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# nodes {} edges {}", self.n(), self.m());
        for &(u, v) in &self.topo.edges {
            let _ = writeln!(out, "{u} {v}");
        }
        out
    }
}

/// Output of [`parse_edge_list`].
#[derive(Debug, Clone)]
pub struct ParsedGraph {
    pub graph: Graph,
    /// Self-loops and duplicate edges skipped during ingestion.
    pub dropped: usize,
    /// Original id of each dense node id.
    pub labels: Vec<u64>,
}

/// Reads a whitespace-separated edge list. Lines starting with `#` or `%`
/// are comments. Ids are remapped to `0..n` in first-appearance order.
/// Tokens after the first two on a line (e.g. weights) are ignored.
pub fn parse_edge_list(text: &str) -> Result<ParsedGraph> {
    let mut index: HashMap<u64, usize> = HashMap::new();
    let mut labels = Vec::new();
    let mut raw = Vec::new();
    let mut id_of = |label: u64| -> usize {
        *index.entry(label).or_insert_with(|| {
            labels.push(label);
            labels.len() - 1
        })
    };
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with('%') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let mut next_id = || -> Result<u64> {
            let tok = tokens.next().ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: "expected two node ids".into(),
            })?;
            tok.parse::<u64>().map_err(|_| Error::Parse {
                line: lineno + 1,
                msg: format!("malformed node id {tok:?}"),
            })
        };
        let a = next_id()?;
        let b = next_id()?;
        raw.push((id_of(a), id_of(b)));
    }
    if labels.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let (graph, dropped) = Graph::from_edges(labels.len(), &raw)?;
    Ok(ParsedGraph {
        graph,
        dropped,
        labels,
    })
}

/// Component labelling of the alive nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentPartition {
    /// `Some(label)` for alive nodes, `None` for removed ones.
    pub component_id: Vec<Option<usize>>,
    /// Component sizes, largest first; `sizes[c]` is the size of label `c`.
    pub sizes: Vec<usize>,
}

impl ComponentPartition {
    pub fn objective(&self) -> u64 {
        self.sizes.iter().map(|&s| pairs(s)).sum()
    }

    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.sizes.len()];
        for (v, c) in self.component_id.iter().enumerate() {
            if let Some(c) = c {
                out[*c].push(v);
            }
        }
        out
    }
}

/// Union-find labelling of the residual graph. Labels are ordered by
/// decreasing size, ties broken by smallest member id.
pub fn connected_components(g: &Graph) -> ComponentPartition {
    let n = g.n();
    let mut uf = UnionFind::new(n);
    for &(u, v) in g.edges() {
        if g.is_alive(u) && g.is_alive(v) {
            uf.union(u, v);
        }
    }
    // (size, first member, root), first member is the smallest id since we scan in order
    let mut roots: Vec<(usize, usize, usize)> = Vec::new();
    let mut root_slot = vec![usize::MAX; n];
    for v in 0..n {
        if !g.is_alive(v) {
            continue;
        }
        let r = uf.find(v);
        if root_slot[r] == usize::MAX {
            root_slot[r] = roots.len();
            roots.push((uf.set_size(r), v, r));
        }
    }
    let mut order: Vec<usize> = (0..roots.len()).collect();
    order.sort_by(|&a, &b| roots[b].0.cmp(&roots[a].0).then(roots[a].1.cmp(&roots[b].1)));
    let mut label_of_slot = vec![0; roots.len()];
    for (label, &slot) in order.iter().enumerate() {
        label_of_slot[slot] = label;
    }
    let component_id = (0..n)
        .map(|v| g.is_alive(v).then(|| label_of_slot[root_slot[uf.find(v)]]))
        .collect();
    let sizes = order.iter().map(|&slot| roots[slot].0).collect();
    ComponentPartition {
        component_id,
        sizes,
    }
}

/// Pairwise connectivity of `g` after additionally removing `removed`.
/// Ids that are already dead are ignored.
pub fn pairwise_connectivity(g: &Graph, removed: &[usize]) -> Result<u64> {
    let mut residual = g.clone();
    for &v in removed {
        if v >= g.n() {
            return Err(Error::NodeOutOfRange(v));
        }
        if residual.is_alive(v) {
            residual.remove_node(v)?;
        }
    }
    Ok(residual.objective())
}

/// An ordered removal set together with its residual objective.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Solution {
    pub removed: Vec<usize>,
    pub objective: u64,
}

impl Solution {
    /// Evaluates `removed` on the full topology of `g` from scratch.
    pub fn evaluate(g: &Graph, removed: Vec<usize>) -> Result<Self> {
        let residual = g.full().remove_nodes(&removed)?;
        Ok(Solution {
            objective: residual.objective(),
            removed,
        })
    }
}

/// Compact view of the alive subgraph with local ids `0..n_alive` in
/// increasing global-id order.
#[derive(Debug, Clone)]
pub struct Residual {
    /// Local id to global id.
    pub nodes: Vec<usize>,
    /// Sorted local neighbor lists.
    pub adj: Vec<Vec<usize>>,
}

impl Residual {
    pub fn new(g: &Graph) -> Self {
        let nodes = g.alive_nodes();
        let mut local = vec![usize::MAX; g.n()];
        for (i, &v) in nodes.iter().enumerate() {
            local[v] = i;
        }
        let adj = nodes
            .iter()
            .map(|&v| g.alive_neighbors(v).map(|u| local[u]).collect())
            .collect();
        Residual { nodes, adj }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}
