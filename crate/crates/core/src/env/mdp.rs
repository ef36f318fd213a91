//! The five-state, one-decision MDP.
//!
//! From s0 the agent picks a1 or a2. a1 lands in s11 (+10) or s12 (-10), a2
//! in s21 (+6) or s22 (+4), each with probability one half, and the episode
//! ends. Observations are one-hot over the five states, actions one-hot over
//! the two choices.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Env, StepInfo, StepResult};
use crate::error::{Error, Result};

pub const STATE_DIM: usize = 5;
pub const ACTION_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MdpState {
    S0,
    S11,
    S12,
    S21,
    S22,
}

impl MdpState {
    pub const ALL: [MdpState; 5] = [Self::S0, Self::S11, Self::S12, Self::S21, Self::S22];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn reward(self) -> f64 {
        match self {
            Self::S0 => 0.0,
            Self::S11 => 10.0,
            Self::S12 => -10.0,
            Self::S21 => 6.0,
            Self::S22 => 4.0,
        }
    }

    pub fn one_hot(self) -> Vec<f64> {
        let mut v = vec![0.0; STATE_DIM];
        v[self.index()] = 1.0;
        v
    }

    /// Nearest state to an arbitrary observation vector (argmax, lowest index on ties).
    pub fn decode(obs: &[f64]) -> MdpState {
        Self::ALL[argmax(obs)]
    }
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// 0 for a1, 1 for a2.
pub fn action_one_hot(action: usize) -> Vec<f64> {
    let mut v = vec![0.0; ACTION_DIM];
    v[action] = 1.0;
    v
}

#[derive(Clone, Debug)]
pub struct FiveStateMdp {
    state: MdpState,
    done: bool,
    rng: ChaCha8Rng,
}

impl Default for FiveStateMdp {
    fn default() -> Self {
        Self::new()
    }
}

impl FiveStateMdp {
    pub fn new() -> Self {
        Self {
            state: MdpState::S0,
            done: true,
            rng: crate::rng::rng(0),
        }
    }

    pub fn state(&self) -> MdpState {
        self.state
    }

    /// Takes a1 (`0`) or a2 (`1`).
    pub fn step_discrete(&mut self, action: usize) -> Result<StepResult> {
        if self.done {
            return Err(Error::Env("step called on a finished episode".into()));
        }
        if action >= ACTION_DIM {
            return Err(Error::Env(format!("action index {action} out of range")));
        }
        let heads = self.rng.random_bool(0.5);
        self.state = match (action, heads) {
            (0, true) => MdpState::S11,
            (0, false) => MdpState::S12,
            (_, true) => MdpState::S21,
            (_, false) => MdpState::S22,
        };
        self.done = true;
        Ok(StepResult {
            observation: self.state.one_hot(),
            reward: self.state.reward(),
            done: true,
            info: StepInfo::default(),
        })
    }
}

impl Env for FiveStateMdp {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn action_dim(&self) -> usize {
        ACTION_DIM
    }

    fn max_steps(&self) -> usize {
        1
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = crate::rng::rng(seed);
        self.state = MdpState::S0;
        self.done = false;
        self.state.one_hot()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if action.len() != ACTION_DIM || action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Env(format!("invalid mdp action {action:?}")));
        }
        self.step_discrete(argmax(action))
    }
}
