//! Dueling Q head, epsilon-greedy action selection, replay memory and
//! double-DQN targets.
//!
//! The advantage MLP is shared across nodes, so it scores any number of
//! candidate actions; the value MLP reads the mean-pooled graph embedding.
//! `Q(a) = V + A(a) - mean_a' A(a')` over alive actions.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use crate::agent::Agent;
use crate::encoder::EMBED_DIM;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::{Tape, Tensor, Var};

pub const HEAD_HIDDEN: usize = 256;
pub const DEFAULT_GAMMA: f64 = 0.99;
/// Glorot output weights are shrunk by this factor so the untrained heads
/// start near zero and the frozen target net adds little noise to targets.
pub const OUTPUT_INIT_SCALE: f64 = 0.01;
pub const DEFAULT_CAPACITY: usize = 20_000;
pub const DEFAULT_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecoderMode {
    #[default]
    Dueling,
    /// Per-node MLP producing Q directly, no value stream.
    Vanilla,
}

/// Two fully connected layers `in -> 256 -> 1` with a ReLU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl Mlp {
    pub fn init<R: Rng>(in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Mlp {
            w1: Tensor::glorot([in_dim, hidden], rng),
            b1: Tensor::zeros([1, hidden]),
            w2: {
                let mut w = Tensor::glorot([hidden, 1], rng);
                w.data_mut().iter_mut().for_each(|x| *x *= OUTPUT_INIT_SCALE);
                w
            },
            b2: Tensor::zeros([1, 1]),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> MlpVars {
        MlpVars {
            w1: tape.leaf(self.w1.clone()),
            b1: tape.leaf(self.b1.clone()),
            w2: tape.leaf(self.w2.clone()),
            b2: tape.leaf(self.b2.clone()),
        }
    }

    fn named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.w1"), &self.w1));
        out.push((format!("{prefix}.b1"), &self.b1));
        out.push((format!("{prefix}.w2"), &self.w2));
        out.push((format!("{prefix}.b2"), &self.b2));
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

impl MlpVars {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = tape.matmul(x, self.w1)?;
        let h = tape.add_row(h, self.b1)?;
        let h = tape.relu(h);
        let o = tape.matmul(h, self.w2)?;
        tape.add_row(o, self.b2)
    }

    fn flatten(&self) -> [Var; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    /// Advantage head (dueling) or the Q head itself (vanilla).
    pub node_head: Mlp,
    /// Present only in dueling mode.
    pub value_head: Option<Mlp>,
}

#[derive(Debug, Clone)]
pub struct DecoderVars {
    pub node_head: MlpVars,
    pub value_head: Option<MlpVars>,
}

impl DecoderVars {
    pub fn flatten(&self) -> Vec<Var> {
        let mut out = self.node_head.flatten().to_vec();
        if let Some(v) = &self.value_head {
            out.extend(v.flatten());
        }
        out
    }
}

impl DecoderParams {
    pub fn init<R: Rng>(mode: DecoderMode, rng: &mut R) -> Self {
        let node_head = Mlp::init(EMBED_DIM, HEAD_HIDDEN, rng);
        let value_head = match mode {
            DecoderMode::Dueling => Some(Mlp::init(EMBED_DIM, HEAD_HIDDEN, rng)),
            DecoderMode::Vanilla => None,
        };
        DecoderParams {
            node_head,
            value_head,
        }
    }

    pub fn mode(&self) -> DecoderMode {
        if self.value_head.is_some() {
            DecoderMode::Dueling
        } else {
            DecoderMode::Vanilla
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> DecoderVars {
        DecoderVars {
            node_head: self.node_head.bind(tape),
            value_head: self.value_head.as_ref().map(|v| v.bind(tape)),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        match &self.value_head {
            Some(v) => {
                self.node_head.named("decoder.advantage", &mut out);
                v.named("decoder.value", &mut out);
            }
            None => self.node_head.named("decoder.q", &mut out),
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self.node_head.tensors_mut().into_iter().collect();
        if let Some(v) = &mut self.value_head {
            out.extend(v.tensors_mut());
        }
        out
    }
}

/// Output of the dueling forward pass for one state.
#[derive(Debug, Clone, Copy)]
pub struct QVars {
    /// `n_alive x 1` Q values.
    pub q: Var,
    /// `n_alive x 1` raw advantage-head outputs.
    pub advantage: Var,
    /// `1 x 1` state value, absent in vanilla mode.
    pub value: Option<Var>,
}

/// Q values for all alive nodes from their `n_alive x 96` embeddings.
pub fn q_on_tape(tape: &mut Tape, emb: Var, vars: &DecoderVars) -> Result<QVars> {
    if tape.value(emb).rows() == 0 {
        return Err(Error::NoAliveNodes);
    }
    let advantage = vars.node_head.forward(tape, emb)?;
    let Some(value_head) = &vars.value_head else {
        return Ok(QVars {
            q: advantage,
            advantage,
            value: None,
        });
    };
    let pooled = tape.mean_rows(emb);
    let value = value_head.forward(tape, pooled)?;
    let mean_adv = tape.mean(advantage);
    let shift = tape.sub(value, mean_adv)?;
    let q = tape.add_scalar(advantage, shift)?;
    Ok(QVars {
        q,
        advantage,
        value: Some(value),
    })
}

/// Per-node Q vector indexed by global node id; dead nodes get `-inf`.
/// `emb` rows are the alive nodes of `alive_mask` in increasing id order.
pub fn q_values(emb: &Tensor, alive_mask: &[bool], params: &DecoderParams) -> Result<Vec<f64>> {
    let alive = alive_mask.iter().filter(|&&a| a).count();
    if alive == 0 {
        return Err(Error::NoAliveNodes);
    }
    if emb.rows() != alive {
        return Err(Error::Shape {
            op: "q_values",
            lhs: emb.shape(),
            rhs: [alive, EMBED_DIM],
        });
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let e = tape.leaf(emb.clone());
    let out = q_on_tape(&mut tape, e, &vars)?;
    Ok(scatter(tape.value(out.q).data(), alive_mask))
}

/// Spreads local (alive-order) values into a global vector, `-inf` for dead.
pub fn scatter(local: &[f64], alive_mask: &[bool]) -> Vec<f64> {
    let mut it = local.iter();
    alive_mask
        .iter()
        .map(|&a| if a { *it.next().expect("one value per alive node") } else { f64::NEG_INFINITY })
        .collect()
}

/// Index of the largest finite entry, lowest index on ties.
pub fn argmax(q: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in q.iter().enumerate() {
        if v == f64::NEG_INFINITY || v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| v > q[b]) {
            best = Some(i);
        }
    }
    best
}

/// Epsilon-greedy over alive (finite-Q) nodes.
pub fn select_action<R: Rng>(q: &[f64], epsilon: f64, rng: &mut R) -> Result<usize> {
    let greedy = argmax(q).ok_or(Error::NoAliveNodes)?;
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        let alive: Vec<usize> = (0..q.len()).filter(|&i| q[i] != f64::NEG_INFINITY && !q[i].is_nan()).collect();
        return Ok(alive[rng.gen_range(0..alive.len())]);
    }
    Ok(greedy)
}

/// One environment step. States are residual-graph snapshots (shared
/// topology plus alive mask), so targets are always recomputed with the
/// current networks.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Graph,
    pub action: usize,
    pub reward: f64,
    pub next_state: Graph,
    pub terminal: bool,
}

/// Bounded FIFO replay memory with uniform sampling without replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    pub fn sample<R: Rng>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.items.len() < batch_size {
            return Err(Error::BufferTooSmall {
                have: self.items.len(),
                need: batch_size,
            });
        }
        Ok(index::sample(rng, self.items.len(), batch_size)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

/// Double-DQN targets: `r + gamma * Q_target(s', argmax_a' Q_online(s', a'))`
/// for non-terminal transitions, `r` otherwise. Both networks run in
/// evaluation mode.
pub fn td_targets(batch: &[&Transition], online: &Agent, target: &Agent, gamma: f64) -> Result<Vec<f64>> {
    td_targets_with(batch, online, target, gamma, |t| t.reward)
}

/// [`td_targets`] with the reward of each transition mapped by `reward`.
pub fn td_targets_with<F>(batch: &[&Transition], online: &Agent, target: &Agent, gamma: f64, reward: F) -> Result<Vec<f64>>
where
    F: Fn(&Transition) -> f64,
{
    batch
        .iter()
        .map(|t| {
            let r = reward(t);
            if t.terminal || gamma == 0.0 || t.next_state.alive_count() == 0 {
                return Ok(r);
            }
            let q_online = online.q_values(&t.next_state)?;
            let best = argmax(&q_online).ok_or(Error::NoAliveNodes)?;
            let q_target = target.q_values(&t.next_state)?;
            Ok(r + gamma * q_target[best])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check_strided;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identical_embeddings_give_identical_q() {
        let p = DecoderParams::init(DecoderMode::Dueling, &mut rng(0));
        let row: Vec<f64> = (0..EMBED_DIM).map(|i| (i as f64 * 0.37).sin()).collect();
        let emb = Tensor::from_fn([4, EMBED_DIM], |_, c| row[c]);
        let q = q_values(&emb, &[true, false, true, true, true], &p).unwrap();
        assert_eq!(q[1], f64::NEG_INFINITY);
        assert!(q[0] == q[2] && q[2] == q[3] && q[3] == q[4]);
    }

    #[test]
    fn advantage_component_is_centered() {
        let mut r = rng(1);
        let p = DecoderParams::init(DecoderMode::Dueling, &mut r);
        let emb = Tensor::glorot([7, EMBED_DIM], &mut r);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let e = tape.leaf(emb);
        let out = q_on_tape(&mut tape, e, &vars).unwrap();
        let v = tape.value(out.value.unwrap()).item();
        let mean: f64 = tape.value(out.q).data().iter().map(|q| q - v).sum::<f64>() / 7.0;
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn single_alive_node_gets_state_value() {
        let mut r = rng(2);
        let p = DecoderParams::init(DecoderMode::Dueling, &mut r);
        let emb = Tensor::glorot([1, EMBED_DIM], &mut r);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let e = tape.leaf(emb);
        let out = q_on_tape(&mut tape, e, &vars).unwrap();
        let v = tape.value(out.value.unwrap()).item();
        assert!((tape.value(out.q).item() - v).abs() < 1e-12);
    }

    #[test]
    fn empty_alive_set_is_an_error() {
        let p = DecoderParams::init(DecoderMode::Dueling, &mut rng(3));
        let emb = Tensor::zeros([0, EMBED_DIM]);
        assert!(matches!(q_values(&emb, &[false, false], &p), Err(Error::NoAliveNodes)));
    }

    #[test]
    fn greedy_selection_and_ties() {
        let mut r = rng(4);
        let q = [1.0, 5.0, f64::NEG_INFINITY, 3.0];
        assert_eq!(select_action(&q, 0.0, &mut r).unwrap(), 1);
        let tied = [f64::NEG_INFINITY, 2.0, 2.0, 1.0];
        assert_eq!(select_action(&tied, 0.0, &mut r).unwrap(), 1);
        assert!(select_action(&[f64::NEG_INFINITY; 3], 0.5, &mut r).is_err());
    }

    #[test]
    fn random_selection_is_uniform_over_alive() {
        let mut r = rng(5);
        let q = [0.0, f64::NEG_INFINITY, 9.0, 1.0, f64::NEG_INFINITY, -3.0];
        let mut counts = [0usize; 6];
        let draws = 10_000;
        for _ in 0..draws {
            counts[select_action(&q, 1.0, &mut r).unwrap()] += 1;
        }
        assert_eq!(counts[1] + counts[4], 0);
        let expected = draws as f64 / 4.0;
        let chi2: f64 = [0, 2, 3, 5]
            .iter()
            .map(|&i| (counts[i] as f64 - expected).powi(2) / expected)
            .sum();
        // 3 degrees of freedom, 99.9% quantile is 16.27
        assert!(chi2 < 16.27, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn argmax_ignores_constant_shift_of_advantages() {
        let mut r = rng(6);
        let p = DecoderParams::init(DecoderMode::Dueling, &mut r);
        let emb = Tensor::glorot([9, EMBED_DIM], &mut r);
        let mask = vec![true; 9];
        let before = argmax(&q_values(&emb, &mask, &p).unwrap());
        let mut shifted = p.clone();
        shifted.node_head.b2.data_mut()[0] += 17.5;
        let after_q = q_values(&emb, &mask, &shifted).unwrap();
        assert_eq!(before, argmax(&after_q));
        let base = q_values(&emb, &mask, &p).unwrap();
        for (a, b) in base.iter().zip(&after_q) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    fn transition(action: usize) -> Transition {
        let g = Graph::simple(3, &[(0, 1), (1, 2)]);
        Transition {
            state: g.clone(),
            action,
            reward: action as f64,
            next_state: g.remove_nodes(&[action % 3]).unwrap(),
            terminal: false,
        }
    }

    #[test]
    fn buffer_evicts_oldest() {
        let mut b = ReplayBuffer::new(3);
        for a in 0..4 {
            b.push(transition(a));
        }
        assert_eq!(b.len(), 3);
        let actions: Vec<usize> = b.iter().map(|t| t.action).collect();
        assert_eq!(actions, vec![1, 2, 3]);
    }

    #[test]
    fn sampling_requires_enough_items() {
        let mut b = ReplayBuffer::new(10);
        b.push(transition(0));
        assert!(matches!(
            b.sample(2, &mut rng(0)),
            Err(Error::BufferTooSmall { have: 1, need: 2 })
        ));
    }

    #[test]
    fn sampling_is_uniform_without_replacement() {
        let mut b = ReplayBuffer::new(10);
        for a in 0..10 {
            b.push(transition(a));
        }
        let mut r = rng(8);
        let mut counts = [0usize; 10];
        let draws = 10_000;
        for _ in 0..draws {
            let batch = b.sample(3, &mut r).unwrap();
            let mut ids: Vec<usize> = batch.iter().map(|t| t.action).collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), 3);
            for i in ids {
                counts[i] += 1;
            }
        }
        let expected = draws as f64 * 3.0 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 9 degrees of freedom, 99.9% quantile is 27.88
        assert!(chi2 < 27.88, "chi2 = {chi2}, counts = {counts:?}");
    }

    #[test]
    fn q_head_loss_gradients() {
        for seed in 0..20 {
            let mut r = rng(50 + seed);
            let p = DecoderParams::init(DecoderMode::Dueling, &mut r);
            let emb = Tensor::glorot([5, EMBED_DIM], &mut r);
            let target = Tensor::glorot([5, 1], &mut r);
            let mut params: Vec<Tensor> = p.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
            // redraw biases until no ReLU preactivation sits near its kink
            let pooled = Tensor::from_fn([1, EMBED_DIM], |_, c| emb.column(c).iter().sum::<f64>() / 5.0);
            let near_kink = |x: &Tensor, w: &Tensor, b: &Tensor| {
                let pre = x.matmul(w);
                (0..pre.rows()).any(|i| pre.row(i).iter().zip(b.data()).any(|(p, b)| (p + b).abs() < 1e-4))
            };
            loop {
                params[1] = Tensor::glorot([1, HEAD_HIDDEN], &mut r);
                params[5] = Tensor::glorot([1, HEAD_HIDDEN], &mut r);
                if !near_kink(&emb, &params[0], &params[1]) && !near_kink(&pooled, &params[4], &params[5]) {
                    break;
                }
            }
            params.push(emb);
            let err = grad_check_strided(
                |tape, v| {
                    let vars = DecoderVars {
                        node_head: MlpVars { w1: v[0], b1: v[1], w2: v[2], b2: v[3] },
                        value_head: Some(MlpVars { w1: v[4], b1: v[5], w2: v[6], b2: v[7] }),
                    };
                    let out = q_on_tape(tape, v[8], &vars).unwrap();
                    let t = tape.leaf(target.clone());
                    tape.mse_loss(out.q, t).unwrap()
                },
                &params,
                1e-5,
                40,
            );
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
