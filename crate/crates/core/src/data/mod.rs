//! Offline trajectories: collection, returns, normalization, windows, files.

pub mod collect;
pub mod idm;
pub mod normalize;
pub mod returns;
pub mod windows;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::env::EnvConfig;
use crate::error::{Error, Result};

pub use collect::{collect_mdp_dataset, collect_toy_dataset, rollout};
pub use idm::{idm_acceleration, IdmDistribution, IdmParams};
pub use normalize::{NormStats, Normalizer};
pub use returns::{discounted_returns, episode_return};
pub use windows::{sample_windows, Batch, Window};

pub const DATASET_MAGIC: &[u8; 8] = b"SPLTDS\x00\x01";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoneReason {
    Crash,
    Timeout,
    Terminal,
}

/// One episode with `T` transitions and `T + 1` timesteps.
///
/// `rewards[t]` is earned on the transition out of `(s_t, a_t)`. The final
/// timestep carries a zero placeholder action and a zero reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub state_dim: usize,
    pub action_dim: usize,
    /// `(T + 1) × state_dim`, row-major.
    pub states: Vec<f64>,
    /// `(T + 1) × action_dim`; the last row is the placeholder.
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
    pub done: DoneReason,
    pub controller: String,
    pub seed: u64,
}

impl EpisodeRecord {
    pub fn timesteps(&self) -> usize {
        self.rewards.len()
    }

    /// Number of transitions `T`.
    pub fn transitions(&self) -> usize {
        self.rewards.len() - 1
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn action(&self, t: usize) -> &[f64] {
        &self.actions[t * self.action_dim..(t + 1) * self.action_dim]
    }

    /// Whether `a_t` is a real action rather than the terminal placeholder.
    pub fn action_valid(&self, t: usize) -> bool {
        t < self.transitions()
    }

    pub fn total_reward(&self) -> f64 {
        episode_return(&self.rewards)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rewards.len();
        let ok = n >= 2
            && self.states.len() == n * self.state_dim
            && self.actions.len() == n * self.action_dim
            && self.returns.len() == n
            && self.rewards.iter().all(|r| r.is_finite())
            && self.rewards[n - 1] == 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Dataset(format!("inconsistent episode (seed {})", self.seed)))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub env: EnvConfig,
    pub gamma: f64,
    pub stats: NormStats,
    pub episodes: Vec<EpisodeRecord>,
    /// Free-form collection metadata (controller distribution, seed, ...).
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct EpisodeHeader {
    timesteps: usize,
    done: DoneReason,
    controller: String,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct DatasetManifest {
    schema_version: u32,
    env: EnvConfig,
    gamma: f64,
    state_dim: usize,
    action_dim: usize,
    stats: NormStats,
    meta: serde_json::Value,
    episodes: Vec<EpisodeHeader>,
}

impl Dataset {
    /// Builds a dataset from raw episodes, computing returns and statistics.
    pub fn from_episodes(env: EnvConfig, gamma: f64, mut episodes: Vec<EpisodeRecord>, meta: serde_json::Value) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::Dataset("no episodes".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        for ep in &mut episodes {
            ep.returns = discounted_returns(&ep.rewards, gamma);
            ep.validate()?;
        }
        let stats = NormStats::compute(&episodes);
        Ok(Self {
            env,
            gamma,
            stats,
            episodes,
            meta,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.episodes[0].state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.episodes[0].action_dim
    }

    pub fn total_transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.transitions()).sum()
    }

    pub fn max_return(&self) -> f64 {
        self.episodes.iter().map(|e| e.returns[0]).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn normalizer(&self) -> Normalizer {
        Normalizer::new(self.stats.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = DatasetManifest {
            schema_version: SCHEMA_VERSION,
            env: self.env.clone(),
            gamma: self.gamma,
            state_dim: self.state_dim(),
            action_dim: self.action_dim(),
            stats: self.stats.clone(),
            meta: self.meta.clone(),
            episodes: self
                .episodes
                .iter()
                .map(|e| EpisodeHeader {
                    timesteps: e.timesteps(),
                    done: e.done,
                    controller: e.controller.clone(),
                    seed: e.seed,
                })
                .collect(),
        };
        let mut payload = Vec::new();
        for e in &self.episodes {
            payload.extend_from_slice(&e.states);
            payload.extend_from_slice(&e.actions);
            payload.extend_from_slice(&e.rewards);
            payload.extend_from_slice(&e.returns);
        }
        container::write(path, DATASET_MAGIC, &manifest, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (m, payload): (DatasetManifest, Vec<f64>) =
            container::read(path, DATASET_MAGIC).map_err(|e| match e {
                Error::Checkpoint(msg) => Error::Dataset(msg),
                other => other,
            })?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::Dataset(format!("unsupported schema version {}", m.schema_version)));
        }
        let mut at = 0usize;
        let mut take = |n: usize| -> Result<Vec<f64>> {
            let out = payload
                .get(at..at + n)
                .ok_or_else(|| Error::Dataset("payload shorter than manifest".into()))?
                .to_vec();
            at += n;
            Ok(out)
        };
        let mut episodes = Vec::with_capacity(m.episodes.len());
        for h in m.episodes {
            let ep = EpisodeRecord {
                state_dim: m.state_dim,
                action_dim: m.action_dim,
                states: take(h.timesteps * m.state_dim)?,
                actions: take(h.timesteps * m.action_dim)?,
                rewards: take(h.timesteps)?,
                returns: take(h.timesteps)?,
                done: h.done,
                controller: h.controller,
                seed: h.seed,
            };
            ep.validate()?;
            episodes.push(ep);
        }
        if at != payload.len() {
            return Err(Error::Dataset("payload longer than manifest".into()));
        }
        Ok(Self {
            env: m.env,
            gamma: m.gamma,
            stats: m.stats,
            episodes,
            meta: m.meta,
        })
    }
}
