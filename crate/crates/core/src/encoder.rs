//! Two-layer multi-head graph attention encoder.
//!
//! Attention runs over each node's closed neighborhood (neighbors plus a
//! self-loop), so isolated residual nodes still get a well-defined output.
//! Layer 1 maps the 4 input features to 8 heads x 8 = 64 hidden units, ELU,
//! then layer 2 maps to 8 heads x 12 = 96 embedding units. Heads are
//! concatenated in both layers.

use std::rc::Rc;

use rand::{Rng, RngCore};

use crate::error::Result;
use crate::features::{features_of, FeatureMode, NUM_FEATURES};
use crate::graph::{Graph, Residual};
use crate::numerics::{AttentionPattern, Axis, Tape, Tensor, Var};

pub const HEADS: usize = 8;
pub const HIDDEN_PER_HEAD: usize = 8;
pub const OUT_PER_HEAD: usize = 12;
pub const HIDDEN_DIM: usize = HEADS * HIDDEN_PER_HEAD;
pub const EMBED_DIM: usize = HEADS * OUT_PER_HEAD;
pub const ATTENTION_SLOPE: f64 = 0.2;

/// Dropout of the variance-constrained encoder's second layer.
pub const CONSTRAINED_DROPOUT: f64 = 0.3;
/// Dropout used everywhere by the original GAT recipe.
pub const STANDARD_DROPOUT: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EncoderMode {
    /// No dropout in layer 1; attention dropout 0.3 in layer 2.
    #[default]
    VarianceConstrained,
    /// Dropout 0.6 on inputs and attention in both layers.
    Standard,
}

/// Dropout rates of one layer, applied only in training mode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LayerDropout {
    pub input: f64,
    pub attention: f64,
}

impl EncoderMode {
    pub fn dropout(self, layer: usize) -> LayerDropout {
        match (self, layer) {
            (EncoderMode::VarianceConstrained, 0) => LayerDropout::default(),
            (EncoderMode::VarianceConstrained, _) => LayerDropout {
                input: 0.0,
                attention: CONSTRAINED_DROPOUT,
            },
            (EncoderMode::Standard, _) => LayerDropout {
                input: STANDARD_DROPOUT,
                attention: STANDARD_DROPOUT,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatHead {
    /// `in_dim x out_dim`.
    pub weight: Tensor,
    /// `out_dim x 1`, applied to the attending node.
    pub att_src: Tensor,
    /// `out_dim x 1`, applied to the attended neighbor.
    pub att_dst: Tensor,
}

impl GatHead {
    fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        GatHead {
            weight: Tensor::glorot([in_dim, out_dim], rng),
            att_src: Tensor::glorot([out_dim, 1], rng),
            att_dst: Tensor::glorot([out_dim, 1], rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    pub heads: Vec<GatHead>,
}

impl GatLayer {
    pub fn init<R: Rng>(in_dim: usize, per_head: usize, heads: usize, rng: &mut R) -> Self {
        GatLayer {
            heads: (0..heads).map(|_| GatHead::init(in_dim, per_head, rng)).collect(),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<GatHeadVars> {
        self.heads
            .iter()
            .map(|h| GatHeadVars {
                weight: tape.leaf(h.weight.clone()),
                att_src: tape.leaf(h.att_src.clone()),
                att_dst: tape.leaf(h.att_dst.clone()),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GatHeadVars {
    pub weight: Var,
    pub att_src: Var,
    pub att_dst: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layer1: GatLayer,
    pub layer2: GatLayer,
}

#[derive(Debug, Clone)]
pub struct EncoderVars {
    pub layer1: Vec<GatHeadVars>,
    pub layer2: Vec<GatHeadVars>,
}

impl EncoderVars {
    /// Same order as [`EncoderParams::named_tensors`].
    pub fn flatten(&self) -> Vec<Var> {
        self.layer1
            .iter()
            .chain(&self.layer2)
            .flat_map(|h| [h.weight, h.att_src, h.att_dst])
            .collect()
    }
}

impl EncoderParams {
    pub fn init<R: Rng>(rng: &mut R) -> Self {
        EncoderParams {
            layer1: GatLayer::init(NUM_FEATURES, HIDDEN_PER_HEAD, HEADS, rng),
            layer2: GatLayer::init(HIDDEN_DIM, OUT_PER_HEAD, HEADS, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            layer1: self.layer1.bind(tape),
            layer2: self.layer2.bind(tape),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (li, layer) in [&self.layer1, &self.layer2].into_iter().enumerate() {
            for (hi, h) in layer.heads.iter().enumerate() {
                let p = format!("encoder.layer{}.head{hi}", li + 1);
                out.push((format!("{p}.weight"), &h.weight));
                out.push((format!("{p}.att_src"), &h.att_src));
                out.push((format!("{p}.att_dst"), &h.att_dst));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layer1
            .heads
            .iter_mut()
            .chain(self.layer2.heads.iter_mut())
            .flat_map(|h| [&mut h.weight, &mut h.att_src, &mut h.att_dst])
            .collect()
    }
}

/// Everything the encoder needs about one residual graph.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub residual: Residual,
    pub features: Tensor,
    pub pattern: Rc<AttentionPattern>,
}

impl GraphInput {
    pub fn new(g: &Graph, mode: FeatureMode) -> Self {
        let residual = Residual::new(g);
        Self::from_residual(residual, mode)
    }

    pub fn from_residual(residual: Residual, mode: FeatureMode) -> Self {
        let features = features_of(&residual, mode);
        let pattern = Rc::new(AttentionPattern::with_self_loops(&residual.adj));
        GraphInput {
            residual,
            features,
            pattern,
        }
    }

    pub fn len(&self) -> usize {
        self.residual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residual.is_empty()
    }
}

/// Shortens the borrow of an optional RNG so it can be passed on repeatedly.
pub fn reborrow<'a>(rng: &'a mut Option<&mut dyn RngCore>) -> Option<&'a mut dyn RngCore> {
    match rng {
        Some(r) => Some(&mut **r),
        None => None,
    }
}

/// One multi-head attention layer. Per head: `Wh = H W`, logits
/// `leaky_relu(a_src·Wh_i + a_dst·Wh_j)` over the closed neighborhood of `i`,
/// softmax, weighted sum of `Wh_j`. Heads are concatenated. Dropout only
/// happens when `rng` is given (training mode).
pub fn gat_layer(
    tape: &mut Tape,
    h: Var,
    pattern: &Rc<AttentionPattern>,
    heads: &[GatHeadVars],
    dropout: LayerDropout,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<Var> {
    let h = match reborrow(&mut rng) {
        Some(r) => tape.dropout(h, dropout.input, r),
        None => h,
    };
    let mut outs = Vec::with_capacity(heads.len());
    for head in heads {
        let wh = tape.matmul(h, head.weight)?;
        let src = tape.matmul(wh, head.att_src)?;
        let dst = tape.matmul(wh, head.att_dst)?;
        let logits = tape.edge_sum(src, dst, Rc::clone(pattern))?;
        let logits = tape.leaky_relu(logits, ATTENTION_SLOPE);
        let mut alpha = tape.sparse_softmax(logits, Rc::clone(pattern))?;
        if let Some(r) = reborrow(&mut rng) {
            alpha = tape.dropout(alpha, dropout.attention, r);
        }
        outs.push(tape.sparse_matmul(alpha, Rc::clone(pattern), wh)?);
    }
    tape.concat(&outs, Axis::Cols)
}

/// Full encoder on the tape: returns `n_alive x 96` embeddings.
pub fn encode_on_tape(
    tape: &mut Tape,
    input: &GraphInput,
    vars: &EncoderVars,
    mode: EncoderMode,
    mut rng: Option<&mut dyn RngCore>,
) -> Result<Var> {
    let x = tape.leaf(input.features.clone());
    let hidden = gat_layer(tape, x, &input.pattern, &vars.layer1, mode.dropout(0), reborrow(&mut rng))?;
    let hidden = tape.elu(hidden);
    gat_layer(tape, hidden, &input.pattern, &vars.layer2, mode.dropout(1), rng)
}

/// Embeddings of the residual graph `g` (evaluation mode unless `rng` is
/// given).
pub fn encode(
    g: &Graph,
    features: FeatureMode,
    params: &EncoderParams,
    mode: EncoderMode,
    rng: Option<&mut dyn RngCore>,
) -> Result<Tensor> {
    let input = GraphInput::new(g, features);
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let out = encode_on_tape(&mut tape, &input, &vars, mode, rng)?;
    Ok(tape.value(out).clone())
}

/// Original-GAT dropout convention, for the ablation.
pub fn encode_standard_gat(
    g: &Graph,
    features: FeatureMode,
    params: &EncoderParams,
    rng: Option<&mut dyn RngCore>,
) -> Result<Tensor> {
    encode(g, features, params, EncoderMode::Standard, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::generators::{gen_ba, gen_er};
    use crate::numerics::grad_check_strided;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64) -> EncoderParams {
        EncoderParams::init(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn output_shapes() {
        let p = params(0);
        for n in [10, 50, 150] {
            let g = gen_ba(n, 2, n as u64).unwrap();
            let e = encode(&g, FeatureMode::Aggregated, &p, EncoderMode::VarianceConstrained, None).unwrap();
            assert_eq!(e.shape(), [n, EMBED_DIM]);
            assert!(e.is_finite());
            let g = g.remove_nodes(&[0, 1]).unwrap();
            let e = encode(&g, FeatureMode::Aggregated, &p, EncoderMode::VarianceConstrained, None).unwrap();
            assert_eq!(e.shape(), [n - 2, EMBED_DIM]);
        }
    }

    #[test]
    fn isolated_node_attends_to_itself() {
        let p = params(1);
        let g = Graph::simple(1, &[]);
        let input = GraphInput::new(&g, FeatureMode::Aggregated);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let x = tape.leaf(Tensor::new([1, 4], vec![0.3, -0.1, 0.7, 0.2]));
        let out = gat_layer(&mut tape, x, &input.pattern, &vars.layer1, LayerDropout::default(), None).unwrap();
        let got = tape.value(out).clone();
        let x = Tensor::new([1, 4], vec![0.3, -0.1, 0.7, 0.2]);
        let expected: Vec<f64> = p.layer1.heads.iter().flat_map(|h| x.matmul(&h.weight).into_data()).collect();
        assert_eq!(got.data(), &expected[..]);
        // elu of a single-node graph embedding is finite
        let e = encode(&g, FeatureMode::Aggregated, &p, EncoderMode::VarianceConstrained, None).unwrap();
        assert!(e.is_finite());
    }

    #[test]
    fn zero_dropout_training_equals_evaluation() {
        let p = params(2);
        let g = gen_er(20, 0.2, 3).unwrap();
        let input = GraphInput::new(&g, FeatureMode::Aggregated);
        let run = |training: bool| {
            let mut tape = Tape::new();
            let vars = p.bind(&mut tape);
            let x = tape.leaf(input.features.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let r: Option<&mut dyn RngCore> = if training { Some(&mut rng) } else { None };
            let out = gat_layer(&mut tape, x, &input.pattern, &vars.layer1, LayerDropout::default(), r).unwrap();
            tape.value(out).clone()
        };
        assert_eq!(run(true), run(false));
    }

    #[test]
    fn evaluation_is_deterministic_and_training_is_seeded() {
        let p = params(3);
        let g = gen_er(30, 0.15, 4).unwrap();
        let a = encode(&g, FeatureMode::Aggregated, &p, EncoderMode::VarianceConstrained, None).unwrap();
        let b = encode(&g, FeatureMode::Aggregated, &p, EncoderMode::VarianceConstrained, None).unwrap();
        assert_eq!(a, b);
        let train = |seed: u64, mode: EncoderMode| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            encode(&g, FeatureMode::Aggregated, &p, mode, Some(&mut rng)).unwrap()
        };
        assert_eq!(train(9, EncoderMode::VarianceConstrained), train(9, EncoderMode::VarianceConstrained));
        assert_ne!(train(9, EncoderMode::VarianceConstrained), a);
        // the ablation shares shapes and eval behaviour but differs when training
        let s = encode_standard_gat(&g, FeatureMode::Aggregated, &p, None).unwrap();
        assert_eq!(s, a);
        assert_eq!(train(9, EncoderMode::Standard).shape(), a.shape());
        assert_ne!(train(9, EncoderMode::Standard), train(9, EncoderMode::VarianceConstrained));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let p = params(4);
        let g = gen_er(15, 0.2, 8).unwrap();
        let input = GraphInput::new(&g, FeatureMode::Aggregated);
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape);
        let x = tape.leaf(input.features.clone());
        for head in &vars.layer1 {
            let wh = tape.matmul(x, head.weight).unwrap();
            let s = tape.matmul(wh, head.att_src).unwrap();
            let d = tape.matmul(wh, head.att_dst).unwrap();
            let e = tape.edge_sum(s, d, input.pattern.clone()).unwrap();
            let e = tape.leaky_relu(e, ATTENTION_SLOPE);
            let a = tape.sparse_softmax(e, input.pattern.clone()).unwrap();
            let alpha = tape.value(a);
            for i in 0..input.len() {
                let s: f64 = input.pattern.row_range(i).map(|k| alpha.data()[k]).sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoder_loss_gradients() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = gen_er(6, 0.4, seed).unwrap();
            let input = GraphInput::new(&g, FeatureMode::Aggregated);
            let p = EncoderParams::init(&mut rng);
            let target = Tensor::glorot([6, EMBED_DIM], &mut rng);
            let flat: Vec<Tensor> = p.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
            let err = grad_check_strided(
                |tape, vars| {
                    let heads = |off: usize| -> Vec<GatHeadVars> {
                        (0..HEADS)
                            .map(|h| GatHeadVars {
                                weight: vars[off + 3 * h],
                                att_src: vars[off + 3 * h + 1],
                                att_dst: vars[off + 3 * h + 2],
                            })
                            .collect()
                    };
                    let ev = EncoderVars {
                        layer1: heads(0),
                        layer2: heads(3 * HEADS),
                    };
                    let mut drop_rng = ChaCha8Rng::seed_from_u64(77);
                    let out = encode_on_tape(tape, &input, &ev, EncoderMode::VarianceConstrained, Some(&mut drop_rng)).unwrap();
                    let t = tape.leaf(target.clone());
                    tape.mse_loss(out, t).unwrap()
                },
                &flat,
                1e-5,
                40,
            );
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
