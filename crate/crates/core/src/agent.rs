//! The full Q network: feature builder, attention encoder and Q head.

use rand::{Rng, RngCore};

use crate::decoder::{q_on_tape, scatter, DecoderMode, DecoderParams, DecoderVars, QVars};
use crate::encoder::{encode_on_tape, EncoderMode, EncoderParams, EncoderVars, GraphInput};
use crate::error::{Error, Result};
use crate::features::FeatureMode;
use crate::graph::Graph;
use crate::numerics::{Tape, Tensor, Var};

/// Component switches; the non-default values are the ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModelConfig {
    pub features: FeatureMode,
    pub encoder: EncoderMode,
    pub decoder: DecoderMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
}

#[derive(Debug, Clone)]
pub struct AgentVars {
    pub encoder: EncoderVars,
    pub decoder: DecoderVars,
}

impl Agent {
    pub fn init<R: Rng>(config: ModelConfig, rng: &mut R) -> Self {
        let encoder = EncoderParams::init(rng);
        let decoder = DecoderParams::init(config.decoder, rng);
        Agent {
            config,
            encoder,
            decoder,
        }
    }

    pub fn input(&self, g: &Graph) -> GraphInput {
        GraphInput::new(g, self.config.features)
    }

    pub fn bind(&self, tape: &mut Tape) -> AgentVars {
        AgentVars {
            encoder: self.encoder.bind(tape),
            decoder: self.decoder.bind(tape),
        }
    }

    /// Encoder and head on the tape. Training mode when `rng` is given.
    pub fn forward(
        &self,
        tape: &mut Tape,
        input: &GraphInput,
        vars: &AgentVars,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<QVars> {
        if input.is_empty() {
            return Err(Error::NoAliveNodes);
        }
        let emb = encode_on_tape(tape, input, &vars.encoder, self.config.encoder, rng)?;
        q_on_tape(tape, emb, &vars.decoder)
    }

    /// Q values of the alive nodes in local (increasing id) order.
    pub fn q_local(&self, input: &GraphInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let out = self.forward(&mut tape, input, &vars, None)?;
        Ok(tape.value(out.q).data().to_vec())
    }

    /// Evaluation-mode Q vector over global ids, `-inf` for removed nodes.
    pub fn q_values(&self, g: &Graph) -> Result<Vec<f64>> {
        let local = self.q_local(&self.input(g))?;
        Ok(scatter(&local, g.alive_mask()))
    }

    /// Encoder parameters first, then decoder, in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.encoder.named_tensors();
        out.extend(self.decoder.named_tensors());
        out
    }

    /// Same order as [`Agent::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.tensors_mut();
        out.extend(self.decoder.tensors_mut());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, t)| t.is_finite())
    }
}

impl AgentVars {
    pub fn encoder_vars(&self) -> Vec<Var> {
        self.encoder.flatten()
    }

    pub fn decoder_vars(&self) -> Vec<Var> {
        self.decoder.flatten()
    }
}
