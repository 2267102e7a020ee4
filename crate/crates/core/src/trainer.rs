//! Episode generation on synthetic graphs and the DQN training loop.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agent::{Agent, ModelConfig};
use crate::checkpoint::{rng_digest, Checkpoint};
use crate::decoder::{argmax, td_targets_with, ReplayBuffer, Transition, DEFAULT_BATCH, DEFAULT_CAPACITY, DEFAULT_GAMMA};
use crate::error::{Error, Result};
use crate::graph::generators::sample_training_graph;
use crate::graph::{pairs, Graph};
use crate::numerics::{Adam, Axis, Tape, Tensor};

pub const METRICS_HEADER: &str = "episode,epsilon,loss,mean_episode_reward";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub episodes: usize,
    /// Fraction of the episode graph's nodes removed before it terminates.
    pub rho: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Multiplicative decay applied after every episode.
    pub epsilon_decay: f64,
    pub lr_decoder: f64,
    pub lr_encoder: f64,
    /// One gradient update every this many episodes.
    pub update_every: usize,
    /// Copy online to target parameters every this many updates.
    pub target_sync_every: usize,
    pub pool_size: usize,
    /// Regenerate the training pool every this many episodes.
    pub refresh_every: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub gamma: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Unit the network's Q values are expressed in.
    pub reward_scale: RewardScale,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 2000,
            rho: 0.1,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay: 0.995,
            lr_decoder: 0.001,
            lr_encoder: 0.005,
            update_every: 20,
            target_sync_every: 300,
            pool_size: 3000,
            refresh_every: 1000,
            n_min: 50,
            n_max: 150,
            gamma: DEFAULT_GAMMA,
            replay_capacity: DEFAULT_CAPACITY,
            batch_size: DEFAULT_BATCH,
            reward_scale: RewardScale::default(),
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad(format!("rho must lie in (0, 1], got {}", self.rho));
        }
        if !(0.0 <= self.epsilon_end && self.epsilon_end <= self.epsilon_start && self.epsilon_start <= 1.0) {
            return bad(format!(
                "need 0 <= epsilon_end <= epsilon_start <= 1, got {} and {}",
                self.epsilon_end, self.epsilon_start
            ));
        }
        if !(self.epsilon_decay > 0.0 && self.epsilon_decay <= 1.0) {
            return bad(format!("epsilon_decay must lie in (0, 1], got {}", self.epsilon_decay));
        }
        for (name, v) in [
            ("update_every", self.update_every),
            ("target_sync_every", self.target_sync_every),
            ("refresh_every", self.refresh_every),
            ("pool_size", self.pool_size),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.replay_capacity < self.batch_size {
            return bad(format!(
                "replay_capacity {} is smaller than batch_size {}",
                self.replay_capacity, self.batch_size
            ));
        }
        if !(self.lr_decoder > 0.0 && self.lr_encoder > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.n_min < 5 || self.n_max < self.n_min {
            return bad(format!("node range [{}, {}] must satisfy 5 <= min <= max", self.n_min, self.n_max));
        }
        Ok(())
    }
}

/// Divisor turning pair-count rewards into the network's Q units. Stored
/// transitions keep pair counts; the divisor is applied inside the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RewardScale {
    Raw,
    /// Divide by the node count of the episode graph.
    #[default]
    PerNode,
    /// Divide by the pair count `n (n - 1) / 2` of the episode graph.
    PerPair,
}

impl RewardScale {
    pub fn divisor(self, n: usize) -> f64 {
        match self {
            RewardScale::Raw => 1.0,
            RewardScale::PerNode => n.max(1) as f64,
            RewardScale::PerPair => pairs(n).max(1) as f64,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RewardScale::Raw => "raw",
            RewardScale::PerNode => "per-node",
            RewardScale::PerPair => "per-pair",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        [RewardScale::Raw, RewardScale::PerNode, RewardScale::PerPair]
            .into_iter()
            .find(|r| r.name() == s)
    }
}

/// `f0 - f_next`: pairs disconnected since the start of the episode.
pub fn reward(f0: u64, f_next: u64) -> Result<f64> {
    if f_next > f0 {
        return Err(Error::InvalidParameter(format!(
            "connectivity grew from {f0} to {f_next}"
        )));
    }
    Ok((f0 - f_next) as f64)
}

/// `ceil(rho * n)` clamped to `[1, n]`. A tiny slack keeps products such as
/// `0.1 * 30` from rounding up past the integer they represent.
pub fn episode_length(n: usize, rho: f64) -> usize {
    let k = (rho * n as f64 - 1e-9).ceil().max(1.0) as usize;
    k.min(n)
}

/// Plays one episode on `g` with the agent in evaluation mode, removing
/// `episode_length(alive, rho)` nodes. Rewards are unscaled.
pub fn run_episode<R: Rng>(g: &Graph, agent: &Agent, epsilon: f64, rho: f64, rng: &mut R) -> Result<Vec<Transition>> {
    let alive = g.alive_count();
    if alive == 0 {
        return Err(Error::NoAliveNodes);
    }
    let k = episode_length(alive, rho);
    let f0 = g.objective();
    let mut state = g.clone();
    let mut out = Vec::with_capacity(k);
    for t in 0..k {
        let action = if rng.gen::<f64>() < epsilon {
            let nodes = state.alive_nodes();
            nodes[rng.gen_range(0..nodes.len())]
        } else {
            argmax(&agent.q_values(&state)?).ok_or(Error::NoAliveNodes)?
        };
        let mut next = state.clone();
        next.remove_node(action)?;
        let r = reward(f0, next.objective())?;
        out.push(Transition {
            state,
            action,
            reward: r,
            next_state: next.clone(),
            terminal: t + 1 == k,
        });
        state = next;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub episode: usize,
    pub epsilon: f64,
    /// Loss of the most recent update; `None` before the first one.
    pub loss: Option<f64>,
    /// Mean undiscounted, unscaled episode return since the previous row.
    pub mean_episode_reward: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        let loss = self.loss.map(|l| l.to_string()).unwrap_or_default();
        format!("{},{},{},{}", self.episode, self.epsilon, loss, self.mean_episode_reward)
    }
}

/// Training state between episodes.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    rng: ChaCha8Rng,
    online: Agent,
    target: Agent,
    buffer: ReplayBuffer,
    adam_encoder: Adam,
    adam_decoder: Adam,
    epsilon: f64,
    episode: usize,
    updates: usize,
    pool: Vec<Graph>,
    window: Vec<f64>,
    last_loss: Option<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let online = Agent::init(config.model, &mut rng);
        Ok(Trainer {
            target: online.clone(),
            online,
            buffer: ReplayBuffer::new(config.replay_capacity),
            adam_encoder: Adam::new(config.lr_encoder),
            adam_decoder: Adam::new(config.lr_decoder),
            epsilon: config.epsilon_start,
            episode: 0,
            updates: 0,
            pool: Vec::new(),
            window: Vec::new(),
            last_loss: None,
            rng,
            config,
        })
    }

    pub fn agent(&self) -> &Agent {
        &self.online
    }

    pub fn target(&self) -> &Agent {
        &self.target
    }

    pub fn episodes_done(&self) -> usize {
        self.episode
    }

    pub fn updates_done(&self) -> usize {
        self.updates
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    fn refresh_pool(&mut self) -> Result<()> {
        let (lo, hi) = (self.config.n_min, self.config.n_max);
        self.pool = (0..self.config.pool_size)
            .map(|_| sample_training_graph(&mut self.rng, lo, hi))
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// One episode, plus an update and a metrics row when one is due.
    pub fn step(&mut self) -> Result<Option<MetricsRow>> {
        if self.episode.is_multiple_of(self.config.refresh_every) {
            self.refresh_pool()?;
        }
        let g = self.pool.choose(&mut self.rng).expect("pool is non-empty").clone();
        let total = self.play(&g)?;
        self.window.push(total);
        self.episode += 1;

        let mut row = None;
        if self.episode.is_multiple_of(self.config.update_every) {
            if self.buffer.len() >= self.config.batch_size {
                self.last_loss = Some(self.update()?);
            }
            let mean = self.window.iter().sum::<f64>() / self.window.len() as f64;
            self.window.clear();
            row = Some(MetricsRow {
                episode: self.episode,
                epsilon: self.epsilon,
                loss: self.last_loss,
                mean_episode_reward: mean,
            });
        }
        self.epsilon = (self.epsilon * self.config.epsilon_decay).max(self.config.epsilon_end);
        Ok(row)
    }

    /// Plays one episode on `g` at the current epsilon and stores its
    /// transitions; returns the episode return in pair counts.
    pub fn play(&mut self, g: &Graph) -> Result<f64> {
        let transitions = run_episode(g, &self.online, self.epsilon, self.config.rho, &mut self.rng)?;
        let total = transitions.iter().map(|t| t.reward).sum();
        for t in transitions {
            self.buffer.push(t);
        }
        Ok(total)
    }

    /// One Adam step on both networks against double-DQN targets; returns
    /// the batch loss.
    pub fn update(&mut self) -> Result<f64> {
        let batch = self.buffer.sample(self.config.batch_size, &mut self.rng)?;
        let scale = self.config.reward_scale;
        let targets = td_targets_with(&batch, &self.online, &self.target, self.config.gamma, |t| {
            t.reward / scale.divisor(t.state.n())
        })?;

        let mut tape = Tape::new();
        let vars = self.online.bind(&mut tape);
        let mut picks = Vec::with_capacity(batch.len());
        for t in &batch {
            let input = self.online.input(&t.state);
            let local = input
                .residual
                .nodes
                .binary_search(&t.action)
                .map_err(|_| Error::DeadNode(t.action))?;
            let q = self.online.forward(&mut tape, &input, &vars, Some(&mut self.rng))?;
            picks.push(tape.pick(q.q, local, 0));
        }
        let pred = tape.concat(&picks, Axis::Rows)?;
        let target = tape.leaf(Tensor::column_vector(targets));
        let loss = tape.mse_loss(pred, target)?;
        let loss_value = tape.value(loss).item();
        let grads = tape.backward(loss);
        let collect = |vs: Vec<_>| -> Vec<Tensor> {
            vs.into_iter().map(|v| grads.wrt(v, tape.value(v).shape())).collect()
        };
        let g_enc = collect(vars.encoder_vars());
        let g_dec = collect(vars.decoder_vars());
        self.adam_encoder.step(&mut self.online.encoder.tensors_mut(), &g_enc);
        self.adam_decoder.step(&mut self.online.decoder.tensors_mut(), &g_dec);
        self.updates += 1;

        if let Some((name, _)) = self.online.named_tensors().into_iter().find(|(_, t)| !t.is_finite()) {
            return Err(Error::NonFinite {
                name,
                update: self.updates,
            });
        }
        if !loss_value.is_finite() {
            return Err(Error::NonFinite {
                name: "loss".into(),
                update: self.updates,
            });
        }
        if self.updates.is_multiple_of(self.config.target_sync_every) {
            self.target = self.online.clone();
        }
        Ok(loss_value)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            agent: self.online.clone(),
            config: self.config.clone(),
            episodes: self.episode,
            rng_digest: rng_digest(&self.rng),
        }
    }
}

pub fn train(config: TrainConfig) -> Result<Checkpoint> {
    train_logged(config, |_| Ok(()))
}

/// Runs `config.episodes` episodes, handing every metrics row to `log`.
pub fn train_logged<F>(config: TrainConfig, mut log: F) -> Result<Checkpoint>
where
    F: FnMut(&MetricsRow) -> Result<()>,
{
    let mut trainer = Trainer::new(config)?;
    for _ in 0..trainer.config.episodes {
        if let Some(row) = trainer.step()? {
            log(&row)?;
        }
    }
    Ok(trainer.checkpoint())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generators::{gen_ba, gen_er};

    fn small_config() -> TrainConfig {
        TrainConfig {
            episodes: 40,
            n_min: 20,
            n_max: 30,
            pool_size: 10,
            batch_size: 16,
            update_every: 5,
            target_sync_every: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn reward_hand_cases() {
        assert_eq!(reward(3, 1).unwrap(), 2.0);
        assert_eq!(reward(3, 0).unwrap(), 3.0);
        assert!(reward(1, 3).is_err());
    }

    #[test]
    fn episode_length_rounds_up() {
        assert_eq!(episode_length(30, 0.1), 3);
        assert_eq!(episode_length(31, 0.1), 4);
        assert_eq!(episode_length(5, 0.01), 1);
        assert_eq!(episode_length(7, 1.0), 7);
    }

    #[test]
    fn single_step_episode_is_terminal() {
        let g = Graph::simple(3, &[(0, 1), (1, 2)]);
        let agent = Agent::init(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        let ep = run_episode(&g, &agent, 0.0, 0.2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(ep.len(), 1);
        assert!(ep[0].terminal);
    }

    #[test]
    fn random_episodes_replay_under_a_seed() {
        let g = gen_ba(40, 2, 3).unwrap();
        let agent = Agent::init(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        let seq = |seed| -> Vec<usize> {
            run_episode(&g, &agent, 1.0, 0.25, &mut ChaCha8Rng::seed_from_u64(seed))
                .unwrap()
                .iter()
                .map(|t| t.action)
                .collect()
        };
        assert_eq!(seq(5), seq(5));
        assert_eq!(seq(5).len(), 10);
    }

    #[test]
    fn rewards_match_recomputation() {
        let agent = Agent::init(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        for seed in 0..5 {
            let g = gen_er(25, 0.15, seed).unwrap();
            let f0 = g.objective();
            let ep = run_episode(&g, &agent, 0.5, 0.3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let mut removed = Vec::new();
            for (t, tr) in ep.iter().enumerate() {
                removed.push(tr.action);
                let f = crate::graph::pairwise_connectivity(&g, &removed).unwrap();
                assert_eq!(tr.reward, (f0 - f) as f64);
                assert_eq!(tr.terminal, t + 1 == ep.len());
            }
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        for c in [
            TrainConfig { rho: 0.0, ..TrainConfig::default() },
            TrainConfig { rho: 1.5, ..TrainConfig::default() },
            TrainConfig { epsilon_end: 0.5, epsilon_start: 0.2, ..TrainConfig::default() },
            TrainConfig { update_every: 0, ..TrainConfig::default() },
            TrainConfig { target_sync_every: 0, ..TrainConfig::default() },
        ] {
            assert!(matches!(Trainer::new(c), Err(Error::InvalidParameter(_))));
        }
    }

    #[test]
    fn zero_episodes_returns_initialization() {
        let config = TrainConfig { episodes: 0, seed: 9, ..TrainConfig::default() };
        let ckpt = train(config.clone()).unwrap();
        let init = Agent::init(config.model, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(ckpt.agent, init);
        assert_eq!(ckpt.episodes, 0);
    }

    #[test]
    fn target_moves_only_at_sync_points() {
        let mut tr = Trainer::new(small_config()).unwrap();
        let mut last_target = tr.target().clone();
        let mut last_updates = 0;
        while tr.episodes_done() < 40 {
            tr.step().unwrap();
            if tr.updates_done() != last_updates {
                last_updates = tr.updates_done();
                if last_updates % 3 == 0 {
                    assert_eq!(tr.target(), tr.agent());
                } else {
                    assert_eq!(tr.target(), &last_target);
                }
                last_target = tr.target().clone();
            }
        }
        assert!(tr.updates_done() >= 6);
    }

    #[test]
    fn short_run_keeps_losses_finite() {
        let mut rows = Vec::new();
        let ckpt = train_logged(small_config(), |r| {
            rows.push(r.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(rows.len(), 8);
        assert!(rows.iter().filter_map(|r| r.loss).all(f64::is_finite));
        assert!(rows.last().unwrap().loss.is_some());
        assert!(ckpt.agent.is_finite());
        assert!(rows.windows(2).all(|w| w[1].epsilon <= w[0].epsilon));
    }
}
