//! Sequence models: the SPLT encoder/decoder pairs and the BC / DT baselines.

pub mod baseline;
pub mod splt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::graph::{Tape, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;
use crate::transformer::{
    add_latent_conditioning, mean_pool, rows_of_kind, AttentionMode, Linear, SequenceInput, TokenEmbedder,
    TokenKind, TokenLayout, Transformer, TransformerConfig,
};

pub use baseline::{BaselineConfig, BaselineKind, BaselineModel};
pub use splt::{SpltConfig, SpltModel};

/// Width, depth and head count shared by every network of a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
}

impl NetConfig {
    pub fn transformer(&self, max_timesteps: usize, attention: AttentionMode) -> TransformerConfig {
        TransformerConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            embed_dim: self.embed_dim,
            max_timesteps,
            attention,
        }
    }
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            n_heads: 8,
            embed_dim: 128,
        }
    }
}

/// Full-attention transformer over `s, a` tokens, mean-pooled, then an MLP to
/// `n` independent `c`-way logits.
#[derive(Clone, Debug)]
pub struct Encoder {
    embed: TokenEmbedder,
    body: Transformer,
    hidden: Linear,
    out: Linear,
    pub n: usize,
    pub c: usize,
}

impl Encoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        net: &NetConfig,
        steps: usize,
        state_dim: usize,
        action_dim: usize,
        n: usize,
        c: usize,
    ) -> Result<Self> {
        let d = net.embed_dim;
        Ok(Self {
            embed: TokenEmbedder::new(store, rng, &format!("{name}.embed"), state_dim, action_dim, false, d, steps),
            body: Transformer::new(store, rng, &format!("{name}.body"), net.transformer(steps, AttentionMode::Full))?,
            hidden: Linear::new(store, rng, &format!("{name}.head_hidden"), d, d),
            out: Linear::new(store, rng, &format!("{name}.head_out"), d, n * c),
            n,
            c,
        })
    }

    /// Logits `[batch · n, c]`.
    pub fn logits(&self, tape: &mut Tape, input: &SequenceInput) -> Result<Var> {
        let (x, seq) = self.embed.embed(tape, input, TokenLayout::EncoderInterleaved)?;
        let valid = self.embed.token_validity(input, &seq);
        let h = self.body.forward(tape, x, input.batch, seq.len(), valid.as_deref())?;
        let pooled = mean_pool(tape, h, seq.len(), valid.as_deref())?;
        let h = self.hidden.forward(tape, pooled)?;
        let h = tape.gelu(h);
        let logits = self.out.forward(tape, h)?;
        tape.reshape(logits, vec![input.batch * self.n, self.c])
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.embed.params();
        p.extend(self.body.params());
        p.extend(self.hidden.params());
        p.extend(self.out.params());
        p
    }
}

/// Maps concatenated one-hot codes `[batch, n · c]` to one `D`-vector per sequence.
#[derive(Clone, Debug)]
pub struct LatentEmbedding {
    proj: Linear,
    pub n: usize,
    pub c: usize,
}

impl LatentEmbedding {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, n: usize, c: usize, dim: usize) -> Self {
        Self {
            proj: Linear::new(store, rng, name, n * c, dim),
            n,
            c,
        }
    }

    pub fn forward(&self, tape: &mut Tape, one_hot: Var) -> Result<Var> {
        let rows = tape.shape(one_hot)[0] / self.n;
        let z = tape.reshape(one_hot, vec![rows, self.n * self.c])?;
        self.proj.forward(tape, z)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.proj.params()
    }
}

/// Causal transformer whose head reads every state token and predicts the
/// action taken there. Used as the SPLT policy decoder (with a latent), as
/// BC (interleaved, no latent), and as DT (return-state-action triplets).
#[derive(Clone, Debug)]
pub struct ActionDecoder {
    embed: TokenEmbedder,
    latent: Option<LatentEmbedding>,
    body: Transformer,
    head: Linear,
    pub layout: TokenLayout,
}

impl ActionDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        net: &NetConfig,
        steps: usize,
        state_dim: usize,
        action_dim: usize,
        layout: TokenLayout,
        latent: Option<(usize, usize)>,
    ) -> Result<Self> {
        let d = net.embed_dim;
        let with_returns = layout == TokenLayout::DtTriplet;
        let embed = TokenEmbedder::new(store, rng, &format!("{name}.embed"), state_dim, action_dim, with_returns, d, steps);
        let latent = latent.map(|(n, c)| LatentEmbedding::new(store, rng, &format!("{name}.latent"), n, c, d));
        Ok(Self {
            embed,
            latent,
            body: Transformer::new(store, rng, &format!("{name}.body"), net.transformer(steps, AttentionMode::Causal))?,
            head: Linear::new(store, rng, &format!("{name}.action_head"), d, action_dim),
            layout,
        })
    }

    /// Predicted actions `[batch · steps, action_dim]`, one per state token.
    pub fn forward(&self, tape: &mut Tape, input: &SequenceInput, z: Option<Var>) -> Result<Var> {
        let (x, seq) = self.embed.embed(tape, input, self.layout)?;
        let x = condition(tape, x, self.latent.as_ref(), z, seq.len())?;
        let valid = self.embed.token_validity(input, &seq);
        let h = self.body.forward(tape, x, input.batch, seq.len(), valid.as_deref())?;
        let rows = tape.gather_rows(h, rows_of_kind(&seq, input.batch, TokenKind::State))?;
        self.head.forward(tape, rows)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.embed.params();
        if let Some(l) = &self.latent {
            p.extend(l.params());
        }
        p.extend(self.body.params());
        p.extend(self.head.params());
        p
    }

    pub fn latent_params(&self) -> Vec<ParamId> {
        self.latent.as_ref().map(|l| l.params()).unwrap_or_default()
    }
}

/// World-model outputs at each action token.
#[derive(Clone, Copy, Debug)]
pub struct WorldOutputs {
    pub next_state: Var,
    pub reward: Var,
    pub next_return: Var,
}

/// Causal transformer over `s, a` tokens; three heads at every action token
/// predict the next state, the reward, and the return from the next state.
#[derive(Clone, Debug)]
pub struct WorldDecoder {
    embed: TokenEmbedder,
    latent: LatentEmbedding,
    body: Transformer,
    state_head: Linear,
    reward_head: Linear,
    return_head: Linear,
}

impl WorldDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        net: &NetConfig,
        steps: usize,
        state_dim: usize,
        action_dim: usize,
        n: usize,
        c: usize,
    ) -> Result<Self> {
        let d = net.embed_dim;
        Ok(Self {
            embed: TokenEmbedder::new(store, rng, &format!("{name}.embed"), state_dim, action_dim, false, d, steps),
            latent: LatentEmbedding::new(store, rng, &format!("{name}.latent"), n, c, d),
            body: Transformer::new(store, rng, &format!("{name}.body"), net.transformer(steps, AttentionMode::Causal))?,
            state_head: Linear::new(store, rng, &format!("{name}.state_head"), d, state_dim),
            reward_head: Linear::new(store, rng, &format!("{name}.reward_head"), d, 1),
            return_head: Linear::new(store, rng, &format!("{name}.return_head"), d, 1),
        })
    }

    pub fn forward(&self, tape: &mut Tape, input: &SequenceInput, z: Var) -> Result<WorldOutputs> {
        let (x, seq) = self.embed.embed(tape, input, TokenLayout::EncoderInterleaved)?;
        let x = condition(tape, x, Some(&self.latent), Some(z), seq.len())?;
        let valid = self.embed.token_validity(input, &seq);
        let h = self.body.forward(tape, x, input.batch, seq.len(), valid.as_deref())?;
        let rows = tape.gather_rows(h, rows_of_kind(&seq, input.batch, TokenKind::Action))?;
        Ok(WorldOutputs {
            next_state: self.state_head.forward(tape, rows)?,
            reward: self.reward_head.forward(tape, rows)?,
            next_return: self.return_head.forward(tape, rows)?,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.embed.params();
        p.extend(self.latent.params());
        p.extend(self.body.params());
        for h in [&self.state_head, &self.reward_head, &self.return_head] {
            p.extend(h.params());
        }
        p
    }
}

fn condition(tape: &mut Tape, x: Var, latent: Option<&LatentEmbedding>, z: Option<Var>, seq: usize) -> Result<Var> {
    match (latent, z) {
        (Some(l), Some(z)) => {
            let e = l.forward(tape, z)?;
            add_latent_conditioning(tape, x, e, seq)
        }
        (None, None) => Ok(x),
        (Some(_), None) => Err(shape_err("decoder", "latent-conditioned decoder called without a code")),
        (None, Some(_)) => Err(shape_err("decoder", "code passed to an unconditioned decoder")),
    }
}

/// Draws one category per row of `probs` and returns the one-hot matrix.
pub fn sample_one_hot<R: Rng>(probs: &Tensor, rng: &mut R) -> Tensor {
    let c = probs.cols();
    let mut out = Tensor::zeros(probs.shape());
    for (r, row) in probs.data().chunks(c).enumerate() {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = c - 1;
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = j;
                break;
            }
        }
        out.data_mut()[r * c + pick] = 1.0;
    }
    out
}

/// Samples `z ~ softmax(logits)` with the straight-through gradient contract.
/// Returns `(one-hot var, probs var)`.
pub fn straight_through_sample<R: Rng>(tape: &mut Tape, logits: Var, rng: &mut R) -> Result<(Var, Var)> {
    let probs = tape.softmax(logits)?;
    let one_hot = sample_one_hot(tape.value(probs), rng);
    Ok((tape.straight_through(probs, one_hot)?, probs))
}

/// One-hot matrix `[codes.len() · n, c]` for explicit codes (0-based digits).
pub fn codes_one_hot(codes: &[Vec<usize>], c: usize) -> Tensor {
    let n = codes.first().map_or(0, |v| v.len());
    let mut t = Tensor::zeros(&[codes.len() * n, c]);
    for (i, code) in codes.iter().enumerate() {
        for (k, &digit) in code.iter().enumerate() {
            t.data_mut()[(i * n + k) * c + digit] = 1.0;
        }
    }
    t
}

/// `Σ_i KL(q_i ‖ U{c})` from probabilities, for reporting and tests.
pub fn kl_to_uniform(probs: &Tensor) -> f64 {
    let c = probs.cols();
    let ln_c = (c as f64).ln();
    probs
        .data()
        .chunks(c)
        .map(|row| {
            // a uniform row is exactly zero; rounding in ln would leave ±ulp
            if row.iter().all(|&p| p == row[0]) {
                return 0.0;
            }
            row.iter().map(|&p| if p > 0.0 { p * (p.ln() + ln_c) } else { 0.0 }).sum::<f64>()
        })
        .sum()
}

/// Per-row weights for masked, batch-averaged reconstruction.
pub(crate) fn row_weights(valid: impl Iterator<Item = bool>, batch: usize) -> Vec<f64> {
    valid.map(|v| if v { 1.0 / batch as f64 } else { 0.0 }).collect()
}
