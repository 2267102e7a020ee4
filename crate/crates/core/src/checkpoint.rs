//! Plain-text model checkpoints.
//!
//! ```text
//! CRITNET-CKPT v1
//! episodes 2000
//! rng_digest 3f1a...
//! config rho 0.1
//! ...
//! param encoder.layer1.head0.weight 4 8
//! 0.123 -0.456 ...
//! end
//! ```
//!
//! Values use the shortest decimal form that parses back to the same `f64`,
//! so a save/load cycle is exact.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::agent::{Agent, ModelConfig};
use crate::decoder::DecoderMode;
use crate::encoder::EncoderMode;
use crate::error::{Error, Result};
use crate::features::FeatureMode;
use crate::numerics::Tensor;
use crate::trainer::{RewardScale, TrainConfig};

pub const CHECKPOINT_MAGIC: &str = "CRITNET-CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub agent: Agent,
    pub config: TrainConfig,
    pub episodes: usize,
    /// SHA-256 over the training RNG's seed, stream and word position.
    pub rng_digest: String,
}

impl Checkpoint {
    /// Untrained checkpoint around `agent`.
    pub fn from_agent(agent: Agent) -> Self {
        let config = TrainConfig {
            episodes: 0,
            model: agent.config,
            ..TrainConfig::default()
        };
        Checkpoint {
            agent,
            config,
            episodes: 0,
            rng_digest: String::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}");
        let _ = writeln!(s, "episodes {}", self.episodes);
        let _ = writeln!(s, "rng_digest {}", self.rng_digest);
        for (k, v) in config_fields(&self.config) {
            let _ = writeln!(s, "config {k} {v}");
        }
        for (name, t) in self.agent.named_tensors() {
            let [r, c] = t.shape();
            let _ = writeln!(s, "param {name} {r} {c}");
            let values: Vec<String> = t.data().iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "{}", values.join(" "));
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty checkpoint"))?;
        let version = header
            .strip_prefix(CHECKPOINT_MAGIC)
            .and_then(|rest| rest.strip_prefix(" v"))
            .ok_or_else(|| bad(1, "missing CRITNET-CKPT header"))?;
        if version != CHECKPOINT_VERSION.to_string() {
            return Err(bad(1, &format!("unsupported checkpoint version {version}")));
        }

        let mut episodes = None;
        let mut digest = None;
        let mut fields = HashMap::new();
        let mut params: Vec<(String, Tensor)> = Vec::new();
        let mut ended = false;
        while let Some((ln, line)) = lines.next() {
            if line.is_empty() {
                continue;
            }
            let mut tok = line.split_whitespace();
            match tok.next() {
                Some("episodes") => episodes = Some(parse_tok::<usize>(tok.next(), ln)?),
                Some("rng_digest") => digest = Some(tok.next().unwrap_or("").to_string()),
                Some("config") => {
                    let key = tok.next().ok_or_else(|| bad(ln, "config line without key"))?;
                    let value = tok.next().ok_or_else(|| bad(ln, "config line without value"))?;
                    fields.insert(key.to_string(), (ln, value.to_string()));
                }
                Some("param") => {
                    let name = tok.next().ok_or_else(|| bad(ln, "param line without name"))?.to_string();
                    let rows = parse_tok::<usize>(tok.next(), ln)?;
                    let cols = parse_tok::<usize>(tok.next(), ln)?;
                    let (vln, values) = lines.next().ok_or_else(|| bad(ln, "param without values"))?;
                    let data = values
                        .split_whitespace()
                        .map(|v| parse_tok::<f64>(Some(v), vln))
                        .collect::<Result<Vec<_>>>()?;
                    if data.len() != rows * cols {
                        return Err(bad(vln, &format!("{name}: expected {} values, found {}", rows * cols, data.len())));
                    }
                    params.push((name, Tensor::new([rows, cols], data)));
                }
                Some("end") => {
                    ended = true;
                    break;
                }
                Some(other) => return Err(bad(ln, &format!("unknown record {other:?}"))),
                None => {}
            }
        }
        if !ended {
            return Err(Error::Checkpoint("truncated: missing end marker".into()));
        }
        let config = config_from_fields(&fields)?;
        let agent = agent_from_params(config.model, params)?;
        Ok(Checkpoint {
            agent,
            config,
            episodes: episodes.ok_or_else(|| Error::Checkpoint("missing episodes record".into()))?,
            rng_digest: digest.unwrap_or_default(),
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.to_text())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_text(&std::fs::read_to_string(path)?)
}

pub fn rng_digest(rng: &ChaCha8Rng) -> String {
    let mut h = Sha256::new();
    h.update(rng.get_seed());
    h.update(rng.get_stream().to_le_bytes());
    h.update(rng.get_word_pos().to_le_bytes());
    hex::encode(h.finalize())
}

fn bad(line: usize, msg: &str) -> Error {
    Error::Checkpoint(format!("line {line}: {msg}"))
}

fn parse_tok<T: std::str::FromStr>(tok: Option<&str>, line: usize) -> Result<T> {
    let tok = tok.ok_or_else(|| bad(line, "missing value"))?;
    tok.parse().map_err(|_| bad(line, &format!("cannot parse {tok:?}")))
}

pub fn feature_mode_name(m: FeatureMode) -> &'static str {
    match m {
        FeatureMode::Aggregated => "aggregated",
        FeatureMode::DegreeOnly => "degree-only",
    }
}

pub fn encoder_mode_name(m: EncoderMode) -> &'static str {
    match m {
        EncoderMode::VarianceConstrained => "variance-constrained",
        EncoderMode::Standard => "standard",
    }
}

pub fn decoder_mode_name(m: DecoderMode) -> &'static str {
    match m {
        DecoderMode::Dueling => "dueling",
        DecoderMode::Vanilla => "vanilla",
    }
}

fn config_fields(c: &TrainConfig) -> Vec<(&'static str, String)> {
    vec![
        ("episodes", c.episodes.to_string()),
        ("rho", c.rho.to_string()),
        ("epsilon_start", c.epsilon_start.to_string()),
        ("epsilon_end", c.epsilon_end.to_string()),
        ("epsilon_decay", c.epsilon_decay.to_string()),
        ("lr_decoder", c.lr_decoder.to_string()),
        ("lr_encoder", c.lr_encoder.to_string()),
        ("update_every", c.update_every.to_string()),
        ("target_sync_every", c.target_sync_every.to_string()),
        ("pool_size", c.pool_size.to_string()),
        ("refresh_every", c.refresh_every.to_string()),
        ("n_min", c.n_min.to_string()),
        ("n_max", c.n_max.to_string()),
        ("gamma", c.gamma.to_string()),
        ("replay_capacity", c.replay_capacity.to_string()),
        ("batch_size", c.batch_size.to_string()),
        ("reward_scale", c.reward_scale.name().to_string()),
        ("seed", c.seed.to_string()),
        ("features", feature_mode_name(c.model.features).to_string()),
        ("encoder", encoder_mode_name(c.model.encoder).to_string()),
        ("decoder", decoder_mode_name(c.model.decoder).to_string()),
    ]
}

fn config_from_fields(fields: &HashMap<String, (usize, String)>) -> Result<TrainConfig> {
    fn get<T: std::str::FromStr>(f: &HashMap<String, (usize, String)>, key: &str) -> Result<T> {
        let (ln, v) = f
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing config field {key}")))?;
        parse_tok(Some(v), *ln)
    }
    let mode = |key: &str| -> Result<String> { get::<String>(fields, key) };
    let features = match mode("features")?.as_str() {
        "aggregated" => FeatureMode::Aggregated,
        "degree-only" => FeatureMode::DegreeOnly,
        other => return Err(Error::Checkpoint(format!("unknown feature mode {other:?}"))),
    };
    let encoder = match mode("encoder")?.as_str() {
        "variance-constrained" => EncoderMode::VarianceConstrained,
        "standard" => EncoderMode::Standard,
        other => return Err(Error::Checkpoint(format!("unknown encoder mode {other:?}"))),
    };
    let decoder = match mode("decoder")?.as_str() {
        "dueling" => DecoderMode::Dueling,
        "vanilla" => DecoderMode::Vanilla,
        other => return Err(Error::Checkpoint(format!("unknown decoder mode {other:?}"))),
    };
    Ok(TrainConfig {
        episodes: get(fields, "episodes")?,
        rho: get(fields, "rho")?,
        epsilon_start: get(fields, "epsilon_start")?,
        epsilon_end: get(fields, "epsilon_end")?,
        epsilon_decay: get(fields, "epsilon_decay")?,
        lr_decoder: get(fields, "lr_decoder")?,
        lr_encoder: get(fields, "lr_encoder")?,
        update_every: get(fields, "update_every")?,
        target_sync_every: get(fields, "target_sync_every")?,
        pool_size: get(fields, "pool_size")?,
        refresh_every: get(fields, "refresh_every")?,
        n_min: get(fields, "n_min")?,
        n_max: get(fields, "n_max")?,
        gamma: get(fields, "gamma")?,
        replay_capacity: get(fields, "replay_capacity")?,
        batch_size: get(fields, "batch_size")?,
        reward_scale: RewardScale::from_name(&get::<String>(fields, "reward_scale")?)
            .ok_or_else(|| Error::Checkpoint("unknown reward_scale".into()))?,
        seed: get(fields, "seed")?,
        model: ModelConfig {
            features,
            encoder,
            decoder,
        },
    })
}

fn agent_from_params(model: ModelConfig, params: Vec<(String, Tensor)>) -> Result<Agent> {
    let mut agent = Agent::init(model, &mut ChaCha8Rng::seed_from_u64(0));
    let expected: Vec<(String, [usize; 2])> = agent
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape()))
        .collect();
    let mut by_name: HashMap<String, Tensor> = HashMap::new();
    for (name, t) in params {
        if by_name.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
    }
    if by_name.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter blocks for this model, found {}",
            expected.len(),
            by_name.len()
        )));
    }
    for ((name, shape), slot) in expected.iter().zip(agent.tensors_mut()) {
        let t = by_name
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if t.shape() != *shape {
            return Err(Error::Checkpoint(format!(
                "{name}: shape {:?} does not match {:?}",
                t.shape(),
                shape
            )));
        }
        *slot = t;
    }
    Ok(agent)
}
