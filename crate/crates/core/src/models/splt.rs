//! The two separated discrete-latent sequence VAEs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{row_weights, straight_through_sample, ActionDecoder, Encoder, NetConfig, WorldDecoder};
use crate::data::{Batch, NormStats};
use crate::error::{Error, Result};
use crate::graph::{Tape, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::transformer::{SequenceInput, TokenLayout};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpltConfig {
    pub net: NetConfig,
    pub c: usize,
    pub n_w: usize,
    pub n_pi: usize,
    pub beta: f64,
    /// Window length is `context_k + 1` timesteps.
    pub context_k: usize,
    pub gamma: f64,
    /// Also train the prediction of `a_t` from `s_t` alone.
    pub include_first_step: bool,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl SpltConfig {
    pub fn toy(state_dim: usize, action_dim: usize) -> Self {
        Self {
            net: NetConfig::default(),
            c: 2,
            n_w: 2,
            n_pi: 3,
            beta: 1e-3,
            context_k: 5,
            gamma: 0.99,
            include_first_step: true,
            state_dim,
            action_dim,
        }
    }

    pub fn steps(&self) -> usize {
        self.context_k + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.c < 1 || self.n_w < 1 || self.n_pi < 1 {
            return Err(Error::InvalidArgument("latent sizes must be positive".into()));
        }
        if self.context_k < 1 {
            return Err(Error::InvalidArgument("context K must be at least 1".into()));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be finite and non-negative, got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Clone, Debug)]
pub struct SpltModel {
    pub config: SpltConfig,
    pub store: ParamStore,
    pub stats: NormStats,
    pub policy_encoder: Encoder,
    pub world_encoder: Encoder,
    pub policy_decoder: ActionDecoder,
    pub world_decoder: WorldDecoder,
}

impl SpltModel {
    pub fn new<R: Rng>(config: SpltConfig, stats: NormStats, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let (net, steps, sd, ad) = (config.net, config.steps(), config.state_dim, config.action_dim);
        let policy_encoder = Encoder::new(&mut store, rng, "policy_encoder", &net, steps, sd, ad, config.n_pi, config.c)?;
        let policy_decoder = ActionDecoder::new(
            &mut store,
            rng,
            "policy_decoder",
            &net,
            steps,
            sd,
            ad,
            TokenLayout::DecoderInterleaved,
            Some((config.n_pi, config.c)),
        )?;
        let world_encoder = Encoder::new(&mut store, rng, "world_encoder", &net, steps, sd, ad, config.n_w, config.c)?;
        let world_decoder = WorldDecoder::new(&mut store, rng, "world_decoder", &net, steps, sd, ad, config.n_w, config.c)?;
        Ok(Self {
            config,
            store,
            stats,
            policy_encoder,
            world_encoder,
            policy_decoder,
            world_decoder,
        })
    }

    pub fn policy_params(&self) -> Vec<ParamId> {
        let mut p = self.policy_encoder.params();
        p.extend(self.policy_decoder.params());
        p
    }

    pub fn world_params(&self) -> Vec<ParamId> {
        let mut p = self.world_encoder.params();
        p.extend(self.world_decoder.params());
        p
    }

    fn input<'b>(&self, batch: &'b Batch) -> SequenceInput<'b> {
        SequenceInput {
            batch: batch.batch,
            steps: batch.steps,
            states: &batch.states,
            actions: &batch.actions,
            returns: None,
            state_valid: Some(&batch.state_valid),
            action_valid: Some(&batch.action_valid),
        }
    }

    /// Categorical probabilities `[batch · n_π, c]` of the policy encoder.
    pub fn encode_policy(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::inference(&self.store);
        let logits = self.policy_encoder.logits(&mut tape, &self.input(batch))?;
        let p = tape.softmax(logits)?;
        Ok(tape.value(p).clone())
    }

    /// Categorical probabilities `[batch · n_w, c]` of the world encoder.
    pub fn encode_world(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::inference(&self.store);
        let logits = self.world_encoder.logits(&mut tape, &self.input(batch))?;
        let p = tape.softmax(logits)?;
        Ok(tape.value(p).clone())
    }

    /// Policy ELBO on a batch: masked reconstruction of every trained action
    /// plus `β · KL(q ‖ U)`, averaged over windows. One code per window.
    pub fn policy_loss<R: Rng>(&self, tape: &mut Tape, batch: &Batch, rng: &mut R) -> Result<(Var, LossValues)> {
        self.policy_loss_with(tape, batch, |t, l| Ok(straight_through_sample(t, l, rng)?.0))
    }

    /// [`Self::policy_loss`] with a caller-supplied map from encoder logits
    /// to the latent fed to the decoder.
    pub fn policy_loss_with<F>(&self, tape: &mut Tape, batch: &Batch, mut sample: F) -> Result<(Var, LossValues)>
    where
        F: FnMut(&mut Tape, Var) -> Result<Var>,
    {
        let input = self.input(batch);
        let logits = self.policy_encoder.logits(tape, &input)?;
        let z = sample(tape, logits)?;
        let pred = self.policy_decoder.forward(tape, &input, Some(z))?;
        let first = self.config.include_first_step;
        let steps = batch.steps;
        let weights = row_weights(
            batch
                .action_valid
                .iter()
                .enumerate()
                .map(|(i, &v)| v && (first || i % steps != 0)),
            batch.batch,
        );
        let recon = tape.squared_error(pred, batch.actions.clone(), weights)?;
        self.finish(tape, recon, logits, batch.batch)
    }

    /// World ELBO: next state, reward, and next return reconstructions plus
    /// the β-weighted KL of the world encoder.
    pub fn world_loss<R: Rng>(&self, tape: &mut Tape, batch: &Batch, rng: &mut R) -> Result<(Var, LossValues)> {
        self.world_loss_with(tape, batch, |t, l| Ok(straight_through_sample(t, l, rng)?.0))
    }

    /// [`Self::world_loss`] with a caller-supplied latent map.
    pub fn world_loss_with<F>(&self, tape: &mut Tape, batch: &Batch, mut sample: F) -> Result<(Var, LossValues)>
    where
        F: FnMut(&mut Tape, Var) -> Result<Var>,
    {
        let input = self.input(batch);
        let logits = self.world_encoder.logits(tape, &input)?;
        let z = sample(tape, logits)?;
        let out = self.world_decoder.forward(tape, &input, z)?;
        let w = row_weights(batch.action_valid.iter().copied(), batch.batch);
        let ls = tape.squared_error(out.next_state, batch.next_states.clone(), w.clone())?;
        let lr = tape.squared_error(out.reward, batch.rewards.clone(), w.clone())?;
        let lg = tape.squared_error(out.next_return, batch.next_returns.clone(), w)?;
        let recon = tape.add(ls, lr)?;
        let recon = tape.add(recon, lg)?;
        self.finish(tape, recon, logits, batch.batch)
    }

    fn finish(&self, tape: &mut Tape, recon: Var, logits: Var, batch: usize) -> Result<(Var, LossValues)> {
        let kl = tape.kl_uniform(logits, 1.0 / batch as f64)?;
        let weighted = tape.scale(kl, self.config.beta);
        let total = tape.add(recon, weighted)?;
        let values = LossValues {
            total: tape.value(total).item(),
            recon: tape.value(recon).item(),
            kl: tape.value(kl).item(),
        };
        Ok((total, values))
    }
}
