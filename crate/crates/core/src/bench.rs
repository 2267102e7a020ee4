//! Inference with a trained agent, benchmark tables, and K sweeps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agent::Agent;
use crate::baselines::{ci, hda, rand as rand_removal, DEFAULT_CI_RADIUS};
use crate::error::{Error, Result};
use crate::graph::{parse_edge_list, Graph, Solution};
use crate::local_search::{cbns, DEFAULT_MAX_NO_IMPROVE};

pub const DEFAULT_BATCH_THRESHOLD: usize = 2000;
pub const DEFAULT_BATCH_FRACTION: f64 = 0.1;
pub const RESULTS_HEADER: &str = "instance,n,m,K,method,objective,seconds,seed";
pub const CURVE_HEADER: &str = "instance,K,method,objective";
pub const WTL_HEADER: &str = "method,opponent,wins,ties,losses";
/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "CRITNET_THREADS";

/// Greedy inference: encode the residual graph, remove the highest-Q node,
/// repeat. While more than `batch_threshold` nodes are alive, the top
/// `ceil(batch_fraction * remaining)` nodes go in one step.
pub fn solve(g: &Graph, k: usize, agent: &Agent, batch_threshold: usize, batch_fraction: f64) -> Result<Solution> {
    if k > g.n() {
        return Err(Error::BudgetTooLarge { k, n: g.n() });
    }
    if !(batch_fraction > 0.0 && batch_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "batch fraction must lie in (0, 1], got {batch_fraction}"
        )));
    }
    let mut residual = g.full();
    let mut removed = Vec::with_capacity(k);
    while removed.len() < k {
        let remaining = k - removed.len();
        let take = if residual.alive_count() > batch_threshold {
            ((batch_fraction * remaining as f64).ceil() as usize).clamp(1, remaining)
        } else {
            1
        };
        let q = agent.q_values(&residual)?;
        let mut order: Vec<usize> = residual.alive_nodes();
        order.sort_by(|&a, &b| q[b].total_cmp(&q[a]).then(a.cmp(&b)));
        for &v in &order[..take] {
            residual.remove_node(v)?;
            removed.push(v);
        }
    }
    Solution::evaluate(g, removed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Hda,
    Ci,
    Rand,
    Agent,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Hda => "hda",
            Method::Ci => "ci",
            Method::Rand => "rand",
            Method::Agent => "agent",
        }
    }

    pub fn is_stochastic(self) -> bool {
        self == Method::Rand
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hda" => Ok(Method::Hda),
            "ci" => Ok(Method::Ci),
            "rand" | "random" => Ok(Method::Rand),
            "agent" => Ok(Method::Agent),
            other => Err(Error::InvalidParameter(format!(
                "unknown method {other:?} (expected hda, ci, rand or agent)"
            ))),
        }
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let methods: Vec<Method> = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(Method::from_str)
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::InvalidParameter("no methods given".into()));
    }
    Ok(methods)
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub cbns: bool,
    pub max_no_improve: usize,
    pub ci_radius: usize,
    pub batch_threshold: usize,
    pub batch_fraction: f64,
    /// Record wall time; when off the seconds column is left empty.
    pub timing: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            cbns: false,
            max_no_improve: DEFAULT_MAX_NO_IMPROVE,
            ci_radius: DEFAULT_CI_RADIUS,
            batch_threshold: DEFAULT_BATCH_THRESHOLD,
            batch_fraction: DEFAULT_BATCH_FRACTION,
            timing: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Instance {
    pub name: String,
    pub graph: Graph,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub instance: String,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub method: String,
    pub objective: u64,
    pub seconds: Option<f64>,
    pub seed: Option<u64>,
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        let secs = self.seconds.map(|s| format!("{s:.6}")).unwrap_or_default();
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.instance, self.n, self.m, self.k, self.method, self.objective, secs, seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WinTieLoss {
    pub method: String,
    pub opponent: String,
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub instance: String,
    pub k: usize,
    pub method: String,
    pub objective: u64,
}

pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = format!("{RESULTS_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{}", r.to_csv());
    }
    s
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut s = format!("{CURVE_HEADER}\n");
    for p in points {
        let _ = writeln!(s, "{},{},{},{}", p.instance, p.k, p.method, p.objective);
    }
    s
}

pub fn wtl_csv(table: &[WinTieLoss]) -> String {
    let mut s = format!("{WTL_HEADER}\n");
    for w in table {
        let _ = writeln!(s, "{},{},{},{},{}", w.method, w.opponent, w.wins, w.ties, w.losses);
    }
    s
}

/// One manifest line: an edge-list path and its budget K.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub k: usize,
}

/// Lines of `path K`, separated by whitespace or a comma. `#` starts a
/// comment. Relative paths resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected `path K`, found {line:?}"),
            });
        }
        let k = fields[1].parse().map_err(|_| Error::Parse {
            line: i + 1,
            msg: format!("bad budget {:?}", fields[1]),
        })?;
        let p = PathBuf::from(fields[0]);
        let path = if p.is_absolute() { p } else { base.join(p) };
        out.push(ManifestEntry { path, k });
    }
    Ok(out)
}

pub fn load_graph(path: &Path) -> Result<Graph> {
    let text = std::fs::read_to_string(path)?;
    Ok(parse_edge_list(&text)?.graph)
}

/// Reads a manifest and every graph it names.
pub fn load_manifest(path: &Path) -> Result<Vec<Instance>> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base)?
        .into_iter()
        .map(|e| {
            let graph = load_graph(&e.path)
                .map_err(|err| Error::InvalidParameter(format!("{}: {err}", e.path.display())))?;
            if e.k > graph.n() {
                return Err(Error::BudgetTooLarge { k: e.k, n: graph.n() });
            }
            let name = e
                .path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| e.path.display().to_string());
            Ok(Instance { name, graph, k: e.k })
        })
        .collect()
}

/// Worker pool sized by `CRITNET_THREADS`, or rayon's default when unset.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::InvalidParameter(e.to_string()))
}

fn construct(g: &Graph, k: usize, method: Method, seed: u64, agent: Option<&Agent>, opts: &BenchOptions) -> Result<Solution> {
    match method {
        Method::Hda => hda(g, k),
        Method::Ci => ci(g, k, opts.ci_radius),
        Method::Rand => rand_removal(g, k, seed),
        Method::Agent => {
            let agent = agent.ok_or_else(|| Error::InvalidParameter("method agent needs a checkpoint".into()))?;
            solve(g, k, agent, opts.batch_threshold, opts.batch_fraction)
        }
    }
}

fn instance_rows(inst: &Instance, methods: &[Method], seeds: &[u64], agent: Option<&Agent>, opts: &BenchOptions) -> Result<Vec<ResultRow>> {
    let g = &inst.graph;
    let row = |method: String, sol: &Solution, started: Instant, seed: Option<u64>| -> Result<ResultRow> {
        // never trust incremental objectives in reported numbers
        let objective = Solution::evaluate(g, sol.removed.clone())?.objective;
        Ok(ResultRow {
            instance: inst.name.clone(),
            n: g.n(),
            m: g.m(),
            k: inst.k,
            method,
            objective,
            seconds: opts.timing.then(|| started.elapsed().as_secs_f64()),
            seed,
        })
    };
    let mut rows = Vec::new();
    for &method in methods {
        if method.is_stochastic() {
            for &seed in seeds {
                let t = Instant::now();
                let sol = construct(g, inst.k, method, seed, agent, opts)?;
                rows.push(row(method.name().into(), &sol, t, Some(seed))?);
            }
        } else {
            let t = Instant::now();
            let sol = construct(g, inst.k, method, 0, agent, opts)?;
            rows.push(row(method.name().into(), &sol, t, None)?);
        }
    }
    if opts.cbns {
        for &method in methods {
            for &seed in seeds {
                let t = Instant::now();
                let start = construct(g, inst.k, method, seed, agent, opts)?;
                let improved = cbns(g, &start, opts.max_no_improve, &mut ChaCha8Rng::seed_from_u64(seed))?;
                rows.push(row(format!("{}+cbns", method.name()), &improved, t, Some(seed))?);
            }
        }
    }
    Ok(rows)
}

/// Every method on every instance, instances in parallel. Rows come back in
/// manifest order regardless of scheduling.
pub fn run_benchmark(instances: &[Instance], methods: &[Method], seeds: &[u64], agent: Option<&Agent>, opts: &BenchOptions) -> Result<Vec<ResultRow>> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("at least one seed is required".into()));
    }
    if methods.contains(&Method::Agent) && agent.is_none() {
        return Err(Error::InvalidParameter("method agent needs a checkpoint".into()));
    }
    let pool = thread_pool()?;
    let per_instance: Vec<Result<Vec<ResultRow>>> = pool.install(|| {
        instances
            .par_iter()
            .map(|inst| instance_rows(inst, methods, seeds, agent, opts))
            .collect()
    });
    let mut rows = Vec::new();
    for r in per_instance {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Wins, ties and losses of `designated` against every other method name,
/// comparing per-instance best objectives with exact equality for ties.
pub fn win_tie_loss(rows: &[ResultRow], designated: &str) -> Vec<WinTieLoss> {
    let mut instances: Vec<&str> = Vec::new();
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !instances.contains(&r.instance.as_str()) {
            instances.push(&r.instance);
        }
        if !names.contains(&r.method.as_str()) {
            names.push(&r.method);
        }
    }
    let best = |inst: &str, method: &str| -> Option<u64> {
        rows.iter()
            .filter(|r| r.instance == inst && r.method == method)
            .map(|r| r.objective)
            .min()
    };
    names
        .iter()
        .filter(|&&n| n != designated)
        .map(|&opp| {
            let mut w = WinTieLoss {
                method: designated.to_string(),
                opponent: opp.to_string(),
                wins: 0,
                ties: 0,
                losses: 0,
            };
            for &inst in &instances {
                if let (Some(a), Some(b)) = (best(inst, designated), best(inst, opp)) {
                    match a.cmp(&b) {
                        std::cmp::Ordering::Less => w.wins += 1,
                        std::cmp::Ordering::Equal => w.ties += 1,
                        std::cmp::Ordering::Greater => w.losses += 1,
                    }
                }
            }
            w
        })
        .collect()
}

/// Objective of every method at every budget in `k_values`. Stochastic
/// methods use `seed`.
pub fn sweep_k(
    name: &str,
    g: &Graph,
    methods: &[Method],
    k_values: &[usize],
    seed: u64,
    agent: Option<&Agent>,
    opts: &BenchOptions,
) -> Result<Vec<CurvePoint>> {
    if let Some(&k) = k_values.iter().find(|&&k| k > g.n()) {
        return Err(Error::BudgetTooLarge { k, n: g.n() });
    }
    let mut out = Vec::new();
    for &method in methods {
        for &k in k_values {
            let sol = construct(g, k, method, seed, agent, opts)?;
            out.push(CurvePoint {
                instance: name.to_string(),
                k,
                method: method.name().to_string(),
                objective: Solution::evaluate(g, sol.removed)?.objective,
            });
        }
    }
    Ok(out)
}

/// `kmin, kmin + kstep, ...` up to and including `kmax`.
pub fn k_range(kmin: usize, kmax: usize, kstep: usize) -> Result<Vec<usize>> {
    if kstep == 0 || kmax < kmin {
        return Err(Error::InvalidParameter(format!(
            "need kstep >= 1 and kmin <= kmax, got {kmin}..{kmax} step {kstep}"
        )));
    }
    Ok((kmin..=kmax).step_by(kstep).collect())
}
