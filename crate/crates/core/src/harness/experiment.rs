use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::checkpoint::VERSION;
use crate::env::{EnvConfig, EnvKind};
use crate::error::Result;
use crate::models::{BaselineConfig, BaselineKind, NetConfig, SpltConfig};
use crate::planner::PlannerMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Splt,
    Bc,
    Dt,
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "splt" => Ok(Self::Splt),
            "bc" => Ok(Self::Bc),
            "dt" => Ok(Self::Dt),
            other => Err(format!("unknown model '{other}', expected splt, bc or dt")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub weight_decay: f64,
    /// Loss rows are recorded every this many steps (and at the last step).
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 32,
            lr: 1e-4,
            warmup_steps: 10_000,
            weight_decay: 0.1,
            log_every: 10,
        }
    }
}

/// Everything needed to reproduce one collect/train/eval run. Serialized
/// verbatim into every artifact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub version: String,
    pub env: EnvKind,
    pub dataset: Option<PathBuf>,
    pub model: ModelKind,
    pub net: NetConfig,
    pub c: usize,
    pub n_w: usize,
    pub n_pi: usize,
    pub beta: f64,
    pub context_k: usize,
    pub gamma: f64,
    pub include_first_step: bool,
    pub discounted_dt_returns: bool,
    pub train: TrainConfig,
    /// Root seed for collection, initialization and sampling.
    pub seed: u64,
    /// Evaluation seeds; each runs `eval_episodes` episodes.
    pub eval_seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub planner: PlannerMode,
    pub horizon: usize,
    pub dt_alpha: f64,
    pub dt_target: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: VERSION.to_string(),
            env: EnvKind::Toy,
            dataset: None,
            model: ModelKind::Splt,
            net: NetConfig::default(),
            c: 2,
            n_w: 2,
            n_pi: 3,
            beta: 1e-3,
            context_k: 5,
            gamma: 0.99,
            include_first_step: true,
            discounted_dt_returns: true,
            train: TrainConfig::default(),
            seed: 0,
            eval_seeds: vec![0, 1, 2],
            eval_episodes: 100,
            planner: PlannerMode::MaxMin,
            horizon: 5,
            dt_alpha: 0.86,
            dt_target: None,
        }
    }
}

impl ExperimentConfig {
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig::default_for(self.env)
    }

    pub fn splt_config(&self, state_dim: usize, action_dim: usize) -> SpltConfig {
        SpltConfig {
            net: self.net,
            c: self.c,
            n_w: self.n_w,
            n_pi: self.n_pi,
            beta: self.beta,
            context_k: self.context_k,
            gamma: self.gamma,
            include_first_step: self.include_first_step,
            state_dim,
            action_dim,
        }
    }

    pub fn baseline_config(&self, kind: BaselineKind, state_dim: usize, action_dim: usize) -> BaselineConfig {
        BaselineConfig {
            kind,
            net: self.net,
            context_k: self.context_k,
            gamma: self.gamma,
            discounted_returns: self.discounted_dt_returns,
            state_dim,
            action_dim,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
