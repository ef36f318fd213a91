//! Behavior cloning and return-conditioned baselines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{row_weights, ActionDecoder, NetConfig};
use crate::data::{Batch, Dataset, NormStats};
use crate::error::{Error, Result};
use crate::graph::{Tape, Var};
use crate::params::ParamStore;
use crate::transformer::{SequenceInput, TokenLayout};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Bc,
    Dt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub kind: BaselineKind,
    pub net: NetConfig,
    pub context_k: usize,
    pub gamma: f64,
    /// Condition on discounted returns-to-go (default) or undiscounted sums.
    pub discounted_returns: bool,
    pub state_dim: usize,
    pub action_dim: usize,
}

impl BaselineConfig {
    pub fn steps(&self) -> usize {
        self.context_k + 1
    }

    pub fn layout(&self) -> TokenLayout {
        match self.kind {
            BaselineKind::Bc => TokenLayout::DecoderInterleaved,
            BaselineKind::Dt => TokenLayout::DtTriplet,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaselineModel {
    pub config: BaselineConfig,
    pub store: ParamStore,
    pub stats: NormStats,
    pub decoder: ActionDecoder,
}

impl BaselineModel {
    pub fn new<R: Rng>(config: BaselineConfig, stats: NormStats, rng: &mut R) -> Result<Self> {
        if config.context_k < 1 {
            return Err(Error::InvalidArgument("context K must be at least 1".into()));
        }
        let mut store = ParamStore::new();
        let name = match config.kind {
            BaselineKind::Bc => "bc",
            BaselineKind::Dt => "dt",
        };
        let decoder = ActionDecoder::new(
            &mut store,
            rng,
            name,
            &config.net,
            config.steps(),
            config.state_dim,
            config.action_dim,
            config.layout(),
            None,
        )?;
        Ok(Self {
            config,
            store,
            stats,
            decoder,
        })
    }

    /// Squared-error next-action loss at every state token with a real action.
    pub fn loss(&self, tape: &mut Tape, batch: &Batch) -> Result<(Var, f64)> {
        let input = SequenceInput {
            batch: batch.batch,
            steps: batch.steps,
            states: &batch.states,
            actions: &batch.actions,
            returns: (self.config.kind == BaselineKind::Dt).then_some(&batch.returns[..]),
            state_valid: Some(&batch.state_valid),
            action_valid: Some(&batch.action_valid),
        };
        let pred = self.decoder.forward(tape, &input, None)?;
        let w = row_weights(batch.action_valid.iter().copied(), batch.batch);
        let loss = tape.squared_error(pred, batch.actions.clone(), w)?;
        let v = tape.value(loss).item();
        Ok((loss, v))
    }
}

/// Target return for DT deployment: `α` times the best episode return in the
/// dataset (`α = 1` gives DT(m)).
pub fn dt_target(dataset: &Dataset, alpha: f64) -> Result<f64> {
    if dataset.episodes.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    Ok(alpha * dataset.max_return())
}

/// Returns-to-go after observing reward `r`: `(R − r) / γ` under the
/// discounted convention, `R − r` otherwise.
pub fn next_return_to_go(current: f64, reward: f64, gamma: f64, discounted: bool) -> f64 {
    if discounted {
        (current - reward) / gamma
    } else {
        current - reward
    }
}
