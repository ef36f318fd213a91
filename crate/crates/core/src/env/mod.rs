//! Evaluation environments.

pub mod mdp;
pub mod toy;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use mdp::{FiveStateMdp, MdpState};
pub use toy::{LeadPhase, ToyConfig, ToyDriving, ToyDrivingState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepInfo {
    pub crash: bool,
    pub timeout: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// A seedable episodic environment with vector observations and actions.
pub trait Env {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Upper bound on transitions per episode.
    fn max_steps(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Toy,
    Mdp,
}

impl std::str::FromStr for EnvKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "toy" => Ok(Self::Toy),
            "mdp" => Ok(Self::Mdp),
            other => Err(format!("unknown env '{other}', expected toy or mdp")),
        }
    }
}

/// Environment description stored with datasets and checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvConfig {
    Toy(ToyConfig),
    Mdp,
}

impl EnvConfig {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvConfig::Toy(_) => EnvKind::Toy,
            EnvConfig::Mdp => EnvKind::Mdp,
        }
    }

    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Toy => EnvConfig::Toy(ToyConfig::default()),
            EnvKind::Mdp => EnvConfig::Mdp,
        }
    }

    pub fn build(&self) -> Box<dyn Env> {
        match self {
            EnvConfig::Toy(c) => Box::new(ToyDriving::new(c.clone())),
            EnvConfig::Mdp => Box::new(FiveStateMdp::new()),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            EnvConfig::Toy(_) => toy::STATE_DIM,
            EnvConfig::Mdp => mdp::STATE_DIM,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self {
            EnvConfig::Toy(_) => 1,
            EnvConfig::Mdp => mdp::ACTION_DIM,
        }
    }
}
