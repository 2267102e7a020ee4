use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use critnet::agent::{Agent, ModelConfig};
use critnet::bench::{
    curve_csv, k_range, load_graph, load_manifest, parse_methods, results_csv, run_benchmark, solve, sweep_k, win_tie_loss,
    wtl_csv, BenchOptions, Method, DEFAULT_BATCH_FRACTION, DEFAULT_BATCH_THRESHOLD,
};
use critnet::baselines::{ci, hda, rand as rand_removal, DEFAULT_CI_RADIUS};
use critnet::checkpoint::{load_checkpoint, save_checkpoint};
use critnet::decoder::DecoderMode;
use critnet::encoder::EncoderMode;
use critnet::features::FeatureMode;
use critnet::local_search::{cbns, DEFAULT_MAX_NO_IMPROVE};
use critnet::trainer::{train_logged, TrainConfig, METRICS_HEADER};
use critnet::Solution;

/// Critical node detection with a graph-attention DQN agent and classic heuristics.
#[derive(Parser)]
#[command(name = "critnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent on synthetic graphs and write a checkpoint.
    Train(TrainArgs),
    /// Pick K critical nodes of one graph.
    Solve(SolveArgs),
    /// Run methods over a manifest of instances and write a results CSV.
    Bench(BenchArgs),
    /// Objective curves over a range of budgets K.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 2000)]
    episodes: usize,
    /// Fraction of nodes removed per training episode.
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Degree-only features instead of the four aggregated centralities.
    #[arg(long)]
    no_fa: bool,
    /// Standard GAT dropout instead of the variance-constrained encoder.
    #[arg(long)]
    no_vg: bool,
    /// Plain per-node Q head instead of the dueling decomposition.
    #[arg(long)]
    no_dd: bool,
    /// Metrics CSV output path.
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    n_min: usize,
    #[arg(long, default_value_t = 150)]
    n_max: usize,
}

#[derive(Args)]
struct SolveArgs {
    /// Edge list, one `u v` pair per line.
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    k: usize,
    /// Checkpoint; required for the agent method.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// hda, ci, rand or agent.
    #[arg(long, default_value = "agent")]
    method: String,
    /// Post-improve with component-based neighborhood search.
    #[arg(long)]
    cbns: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_CI_RADIUS)]
    ci_radius: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_NO_IMPROVE)]
    max_no_improve: usize,
}

#[derive(Args)]
struct BenchArgs {
    /// Lines of `path K`; relative paths resolve against the manifest's directory.
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated subset of hda, ci, rand, agent.
    #[arg(long, default_value = "hda,ci,rand")]
    methods: String,
    /// Add a post-improved `<method>+cbns` row per method and seed.
    #[arg(long)]
    cbns: bool,
    /// Comma-separated seeds for stochastic methods and the local search.
    #[arg(long, default_value = "0")]
    seeds: String,
    /// Results CSV path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Leave the seconds column empty so output is reproducible byte for byte.
    #[arg(long)]
    no_timing: bool,
    /// Method whose wins/ties/losses are tallied; defaults to agent if present, else the first method.
    #[arg(long)]
    versus: Option<String>,
    #[arg(long, default_value_t = DEFAULT_CI_RADIUS)]
    ci_radius: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_NO_IMPROVE)]
    max_no_improve: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value = "hda,ci,rand")]
    methods: String,
    #[arg(long, default_value_t = 0)]
    kmin: usize,
    #[arg(long)]
    kmax: usize,
    #[arg(long, default_value_t = 1)]
    kstep: usize,
    /// Curve CSV path; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_CI_RADIUS)]
    ci_radius: usize,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train(a) => train(a),
        Command::Solve(a) => solve_cmd(a),
        Command::Bench(a) => bench(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load_agent(ckpt: Option<&Path>, methods: &[Method]) -> Result<Option<Agent>> {
    match ckpt {
        Some(p) => {
            let c = load_checkpoint(p).with_context(|| format!("loading checkpoint {}", p.display()))?;
            Ok(Some(c.agent))
        }
        None if methods.contains(&Method::Agent) => bail!("method agent needs --ckpt"),
        None => Ok(None),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let model = ModelConfig {
        features: if a.no_fa { FeatureMode::DegreeOnly } else { FeatureMode::Aggregated },
        encoder: if a.no_vg { EncoderMode::Standard } else { EncoderMode::VarianceConstrained },
        decoder: if a.no_dd { DecoderMode::Vanilla } else { DecoderMode::Dueling },
    };
    let config = TrainConfig {
        episodes: a.episodes,
        rho: a.rho,
        seed: a.seed,
        n_min: a.n_min,
        n_max: a.n_max,
        model,
        ..TrainConfig::default()
    };
    config.validate()?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        if !dir.is_dir() {
            bail!("output directory {} does not exist", dir.display());
        }
    }
    let mut metrics = match &a.metrics {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
            writeln!(w, "{METRICS_HEADER}")?;
            Some(w)
        }
        None => None,
    };
    let ckpt = train_logged(config, |row| {
        if let Some(w) = metrics.as_mut() {
            writeln!(w, "{}", row.to_csv())?;
        }
        Ok(())
    })?;
    if let Some(mut w) = metrics {
        w.flush()?;
    }
    save_checkpoint(&a.out, &ckpt).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("trained {} episodes, checkpoint at {}", ckpt.episodes, a.out.display());
    Ok(())
}

fn solve_cmd(a: SolveArgs) -> Result<()> {
    let method: Method = a.method.parse()?;
    let g = load_graph(&a.graph).with_context(|| format!("reading {}", a.graph.display()))?;
    if a.k > g.n() {
        bail!("--k {} exceeds the {} nodes of {}", a.k, g.n(), a.graph.display());
    }
    let agent = load_agent(a.ckpt.as_deref(), &[method])?;
    let mut sol = match method {
        Method::Hda => hda(&g, a.k)?,
        Method::Ci => ci(&g, a.k, a.ci_radius)?,
        Method::Rand => rand_removal(&g, a.k, a.seed)?,
        Method::Agent => solve(
            &g,
            a.k,
            agent.as_ref().expect("checked by load_agent"),
            DEFAULT_BATCH_THRESHOLD,
            DEFAULT_BATCH_FRACTION,
        )?,
    };
    if a.cbns {
        sol = cbns(&g, &sol, a.max_no_improve, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    }
    let sol = Solution::evaluate(&g, sol.removed)?;
    let nodes: Vec<String> = sol.removed.iter().map(|v| v.to_string()).collect();
    println!("nodes: {}", nodes.join(" "));
    println!("objective: {}", sol.objective);
    Ok(())
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse().with_context(|| format!("bad seed {t:?}")))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        bail!("--seeds needs at least one seed");
    }
    Ok(seeds)
}

fn bench(a: BenchArgs) -> Result<()> {
    let methods = parse_methods(&a.methods)?;
    let seeds = parse_seeds(&a.seeds)?;
    let agent = load_agent(a.ckpt.as_deref(), &methods)?;
    let instances = load_manifest(&a.manifest).with_context(|| format!("reading manifest {}", a.manifest.display()))?;
    let opts = BenchOptions {
        cbns: a.cbns,
        max_no_improve: a.max_no_improve,
        ci_radius: a.ci_radius,
        timing: !a.no_timing,
        ..BenchOptions::default()
    };
    let rows = run_benchmark(&instances, &methods, &seeds, agent.as_ref(), &opts)?;
    write_output(a.out.as_deref(), &results_csv(&rows))?;
    let versus = a.versus.unwrap_or_else(|| {
        if methods.contains(&Method::Agent) {
            "agent".into()
        } else {
            methods[0].name().into()
        }
    });
    eprint!("{}", wtl_csv(&win_tie_loss(&rows, &versus)));
    Ok(())
}

fn sweep(a: SweepArgs) -> Result<()> {
    let methods = parse_methods(&a.methods)?;
    let ks = k_range(a.kmin, a.kmax, a.kstep)?;
    let agent = load_agent(a.ckpt.as_deref(), &methods)?;
    let g = load_graph(&a.graph).with_context(|| format!("reading {}", a.graph.display()))?;
    if a.kmax > g.n() {
        bail!("--kmax {} exceeds the {} nodes of {}", a.kmax, g.n(), a.graph.display());
    }
    let name = a
        .graph
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let opts = BenchOptions {
        ci_radius: a.ci_radius,
        ..BenchOptions::default()
    };
    let points = sweep_k(&name, &g, &methods, &ks, a.seed, agent.as_ref(), &opts)?;
    write_output(a.out.as_deref(), &curve_csv(&points))
}
