//! GPT-style pre-norm transformer blocks, token embedding, pooling, and
//! latent conditioning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::{AttentionShape, Tape, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMode {
    Causal,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    /// Number of timesteps a sequence may span; sets the positional table.
    pub max_timesteps: usize,
    pub attention: AttentionMode,
}

impl TransformerConfig {
    pub fn full_size(max_timesteps: usize, attention: AttentionMode) -> Self {
        Self {
            n_layers: 4,
            n_heads: 8,
            embed_dim: 128,
            max_timesteps,
            attention,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.embed_dim == 0 {
            return Err(Error::InvalidArgument(
                "transformer needs at least one layer, head, and embedding unit".into(),
            ));
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidArgument(format!(
                "embed_dim {} is not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.max_timesteps == 0 {
            return Err(Error::InvalidArgument("max_timesteps must be positive".into()));
        }
        Ok(())
    }

    /// Longest token sequence any layout can produce (three tokens per step).
    pub fn max_sequence_length(&self) -> usize {
        3 * self.max_timesteps
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
    ) -> Self {
        let weight = store.add_normal(format!("{name}.weight"), &[fan_in, fan_out], INIT_STD, true, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[fan_out]), false);
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let h = tape.matmul(x, w)?;
        tape.add_row(h, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        let gain = store.add(format!("{name}.gain"), Tensor::full(&[dim], 1.0), false);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[dim]), false);
        Self { gain, bias }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b, LN_EPS)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gain, self.bias]
    }
}

/// Pre-norm residual block: `x + Attn(LN(x))`, then `x + MLP(LN(x))` with a
/// 4x GELU expansion.
#[derive(Clone, Debug)]
pub struct Block {
    ln_attn: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    proj: Linear,
    ln_mlp: LayerNorm,
    fc: Linear,
    fc_out: Linear,
    heads: usize,
}

impl Block {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, dim: usize, heads: usize) -> Self {
        Self {
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), dim),
            query: Linear::new(store, rng, &format!("{name}.query"), dim, dim),
            key: Linear::new(store, rng, &format!("{name}.key"), dim, dim),
            value: Linear::new(store, rng, &format!("{name}.value"), dim, dim),
            proj: Linear::new(store, rng, &format!("{name}.proj"), dim, dim),
            ln_mlp: LayerNorm::new(store, &format!("{name}.ln_mlp"), dim),
            fc: Linear::new(store, rng, &format!("{name}.fc"), dim, 4 * dim),
            fc_out: Linear::new(store, rng, &format!("{name}.fc_out"), 4 * dim, dim),
            heads,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        batch: usize,
        seq: usize,
        mode: AttentionMode,
        key_valid: Option<&[bool]>,
    ) -> Result<Var> {
        let h = self.ln_attn.forward(tape, x)?;
        let q = self.query.forward(tape, h)?;
        let k = self.key.forward(tape, h)?;
        let v = self.value.forward(tape, h)?;
        let shape = AttentionShape {
            batch,
            seq,
            heads: self.heads,
            causal: mode == AttentionMode::Causal,
        };
        let att = tape.attention(q, k, v, shape, key_valid)?;
        let att = self.proj.forward(tape, att)?;
        let x = tape.add(x, att)?;
        let h = self.ln_mlp.forward(tape, x)?;
        let h = self.fc.forward(tape, h)?;
        let h = tape.gelu(h);
        let h = self.fc_out.forward(tape, h)?;
        tape.add(x, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.ln_attn.params();
        for l in [&self.query, &self.key, &self.value, &self.proj] {
            p.extend(l.params());
        }
        p.extend(self.ln_mlp.params());
        p.extend(self.fc.params());
        p.extend(self.fc_out.params());
        p
    }
}

/// Stack of blocks followed by a final layer norm.
#[derive(Clone, Debug)]
pub struct Transformer {
    pub config: TransformerConfig,
    blocks: Vec<Block>,
    ln_final: LayerNorm,
}

impl Transformer {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, config: TransformerConfig) -> Result<Self> {
        config.validate()?;
        let blocks = (0..config.n_layers)
            .map(|i| Block::new(store, rng, &format!("{name}.block{i}"), config.embed_dim, config.n_heads))
            .collect();
        let ln_final = LayerNorm::new(store, &format!("{name}.ln_final"), config.embed_dim);
        Ok(Self {
            config,
            blocks,
            ln_final,
        })
    }

    /// Runs all blocks over `x` laid out as `[batch][seq]` rows.
    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Var,
        batch: usize,
        seq: usize,
        key_valid: Option<&[bool]>,
    ) -> Result<Var> {
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(tape, h, batch, seq, self.config.attention, key_valid)?;
        }
        self.ln_final.forward(tape, h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.blocks.iter().flat_map(Block::params).collect();
        p.extend(self.ln_final.params());
        p
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenKind {
    Return,
    State,
    Action,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenLayout {
    /// `s, a, s, a, …, s`: ends on a state.
    DecoderInterleaved,
    /// `s, a, …, s, a`: ends on an action.
    EncoderInterleaved,
    /// `(R, s, a)` per step.
    DtTriplet,
}

/// Per-position token tags and timestep offsets for one sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub kinds: Vec<TokenKind>,
    pub timesteps: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn positions_of(&self, kind: TokenKind) -> Vec<usize> {
        self.kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == kind)
            .map(|(i, _)| i)
            .collect()
    }
}

impl TokenLayout {
    pub fn sequence(self, steps: usize) -> TokenSequence {
        let mut kinds = Vec::new();
        let mut timesteps = Vec::new();
        for t in 0..steps {
            let last = t + 1 == steps;
            let step_kinds: &[TokenKind] = match self {
                TokenLayout::DecoderInterleaved if last => &[TokenKind::State],
                TokenLayout::DecoderInterleaved | TokenLayout::EncoderInterleaved => {
                    &[TokenKind::State, TokenKind::Action]
                }
                TokenLayout::DtTriplet => &[TokenKind::Return, TokenKind::State, TokenKind::Action],
            };
            for &k in step_kinds {
                kinds.push(k);
                timesteps.push(t);
            }
        }
        TokenSequence { kinds, timesteps }
    }
}

/// Raw per-timestep inputs for a batch of equally long sequences. Arrays are
/// row-major `[batch][step][dim]`.
#[derive(Clone, Copy, Debug)]
pub struct SequenceInput<'a> {
    pub batch: usize,
    pub steps: usize,
    pub states: &'a [f64],
    pub actions: &'a [f64],
    pub returns: Option<&'a [f64]>,
    pub state_valid: Option<&'a [bool]>,
    pub action_valid: Option<&'a [bool]>,
}

/// Per-type linear + layer-norm projections and learned per-timestep
/// positional embeddings shared by the tokens of a timestep.
#[derive(Clone, Debug)]
pub struct TokenEmbedder {
    state: (Linear, LayerNorm),
    action: (Linear, LayerNorm),
    ret: Option<(Linear, LayerNorm)>,
    position: ParamId,
    state_dim: usize,
    action_dim: usize,
    max_timesteps: usize,
}

impl TokenEmbedder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        state_dim: usize,
        action_dim: usize,
        with_returns: bool,
        embed_dim: usize,
        max_timesteps: usize,
    ) -> Self {
        let state = (
            Linear::new(store, rng, &format!("{name}.state"), state_dim, embed_dim),
            LayerNorm::new(store, &format!("{name}.state_ln"), embed_dim),
        );
        let action = (
            Linear::new(store, rng, &format!("{name}.action"), action_dim, embed_dim),
            LayerNorm::new(store, &format!("{name}.action_ln"), embed_dim),
        );
        let ret = with_returns.then(|| {
            (
                Linear::new(store, rng, &format!("{name}.return"), 1, embed_dim),
                LayerNorm::new(store, &format!("{name}.return_ln"), embed_dim),
            )
        });
        let position = store.add_normal(
            format!("{name}.position"),
            &[max_timesteps, embed_dim],
            INIT_STD,
            false,
            rng,
        );
        Self {
            state,
            action,
            ret,
            position,
            state_dim,
            action_dim,
            max_timesteps,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    /// Embeds `input` under `layout`; rows come out as `[batch][token]`.
    pub fn embed(&self, tape: &mut Tape, input: &SequenceInput, layout: TokenLayout) -> Result<(Var, TokenSequence)> {
        let SequenceInput { batch, steps, .. } = *input;
        if steps == 0 || batch == 0 {
            return Err(shape_err("embed_tokens", "empty sequence"));
        }
        if steps > self.max_timesteps {
            return Err(shape_err(
                "embed_tokens",
                format!("{steps} timesteps exceed the maximum of {}", self.max_timesteps),
            ));
        }
        let rows = batch * steps;
        if input.states.len() != rows * self.state_dim || input.actions.len() != rows * self.action_dim {
            return Err(shape_err(
                "embed_tokens",
                format!(
                    "{} state and {} action values for {rows} rows of widths {} and {}",
                    input.states.len(),
                    input.actions.len(),
                    self.state_dim,
                    self.action_dim
                ),
            ));
        }
        let seq = layout.sequence(steps);

        let project = |tape: &mut Tape, (lin, ln): &(Linear, LayerNorm), data: &[f64], width: usize| -> Result<Var> {
            let x = tape.constant(Tensor::new(vec![rows, width], data.to_vec())?);
            let h = lin.forward(tape, x)?;
            ln.forward(tape, h)
        };
        let s = project(tape, &self.state, input.states, self.state_dim)?;
        let a = project(tape, &self.action, input.actions, self.action_dim)?;
        let mut parts = vec![s, a];
        if layout == TokenLayout::DtTriplet {
            let (ret, returns) = match (&self.ret, input.returns) {
                (Some(r), Some(v)) if v.len() == rows => (r, v),
                _ => {
                    return Err(shape_err(
                        "embed_tokens",
                        "triplet layout needs a return projection and one return per step",
                    ))
                }
            };
            parts.push(project(tape, ret, returns, 1)?);
        }
        let table = tape.concat_rows(&parts)?;

        let mut idx = Vec::with_capacity(batch * seq.len());
        let mut pos_idx = Vec::with_capacity(batch * seq.len());
        for b in 0..batch {
            for (kind, &t) in seq.kinds.iter().zip(&seq.timesteps) {
                let block = match kind {
                    TokenKind::State => 0,
                    TokenKind::Action => 1,
                    TokenKind::Return => 2,
                };
                idx.push(block * rows + b * steps + t);
                pos_idx.push(t);
            }
        }
        let tokens = tape.gather_rows(table, idx)?;
        let pos_table = tape.param(self.position);
        let pos = tape.gather_rows(pos_table, pos_idx)?;
        Ok((tape.add(tokens, pos)?, seq))
    }

    /// Per-token key validity for `layout`, or `None` when every token is valid.
    pub fn token_validity(&self, input: &SequenceInput, seq: &TokenSequence) -> Option<Vec<bool>> {
        if input.state_valid.is_none() && input.action_valid.is_none() {
            return None;
        }
        let mut out = Vec::with_capacity(input.batch * seq.len());
        for b in 0..input.batch {
            for (kind, &t) in seq.kinds.iter().zip(&seq.timesteps) {
                let i = b * input.steps + t;
                let ok = match kind {
                    TokenKind::Action => input.action_valid.is_none_or(|m| m[i]),
                    TokenKind::State | TokenKind::Return => input.state_valid.is_none_or(|m| m[i]),
                };
                out.push(ok);
            }
        }
        Some(out)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = Vec::new();
        for (l, n) in [Some(&self.state), Some(&self.action), self.ret.as_ref()].into_iter().flatten() {
            p.extend(l.params());
            p.extend(n.params());
        }
        p.push(self.position);
        p
    }
}

/// Arithmetic mean over the valid positions of each sequence.
pub fn mean_pool(tape: &mut Tape, x: Var, seq: usize, valid: Option<&[bool]>) -> Result<Var> {
    let rows = tape.shape(x)[0];
    if seq == 0 || !rows.is_multiple_of(seq) {
        return Err(shape_err("mean_pool", format!("{rows} rows in groups of {seq}")));
    }
    let mut weights = vec![0.0; rows];
    for g in 0..rows / seq {
        let ok = |t: usize| valid.is_none_or(|m| m[g * seq + t]);
        let count = (0..seq).filter(|&t| ok(t)).count();
        if count == 0 {
            return Err(shape_err("mean_pool", "sequence with no valid positions"));
        }
        for t in 0..seq {
            if ok(t) {
                weights[g * seq + t] = 1.0 / count as f64;
            }
        }
    }
    tape.weighted_pool(x, seq, weights)
}

/// Adds one conditioning vector per sequence to every token of it.
pub fn add_latent_conditioning(tape: &mut Tape, tokens: Var, z_embed: Var, seq: usize) -> Result<Var> {
    tape.add_group(tokens, z_embed, seq)
}

/// Parameter count of a [`Transformer`] from its configuration alone.
pub fn transformer_param_count(config: &TransformerConfig) -> usize {
    let d = config.embed_dim;
    config.n_layers * (12 * d * d + 13 * d) + 2 * d
}

/// Row indices in `[batch][token]` layout of every token of `kind`.
pub fn rows_of_kind(seq: &TokenSequence, batch: usize, kind: TokenKind) -> Vec<usize> {
    let pos = seq.positions_of(kind);
    (0..batch)
        .flat_map(|b| pos.iter().map(move |p| b * seq.len() + p))
        .collect()
}
