//! One-dimensional two-vehicle following problem.
//!
//! The ego vehicle trails a lead vehicle on a straight road. In half of the
//! episodes the lead brakes as late as possible so that it stops short of
//! the 70 m mark, waits, and drives off again; otherwise it speeds up to the
//! limit. The brake flag is not part of the observation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Env, StepInfo, StepResult};
use crate::error::{Error, Result};

/// `[ego position, ego velocity, lead position, lead velocity]`.
pub const STATE_DIM: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub dt: f64,
    pub horizon_s: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub ego_accel_limit: f64,
    pub ego_v0_range: (f64, f64),
    pub gap0_range: (f64, f64),
    pub brake_probability: f64,
    pub stop_mark: f64,
    pub lead_max_decel: f64,
    /// Acceleration of a lead that never brakes.
    pub lead_speedup_accel: f64,
    /// Acceleration after the standstill dwell.
    pub lead_accel: f64,
    pub dwell_s: f64,
    pub crash_penalty: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            horizon_s: 10.0,
            v_min: 0.0,
            v_max: 10.0,
            ego_accel_limit: 1.0,
            ego_v0_range: (7.5, 10.0),
            gap0_range: (10.0, 20.0),
            brake_probability: 0.5,
            stop_mark: 70.0,
            lead_max_decel: 5.0,
            lead_speedup_accel: 2.0,
            lead_accel: 1.0,
            dwell_s: 1.0,
            crash_penalty: -100.0,
        }
    }
}

impl ToyConfig {
    pub fn max_steps(&self) -> usize {
        (self.horizon_s / self.dt - 1e-9).ceil() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeadPhase {
    /// Speeding up to the limit in a non-braking episode.
    SpeedUp,
    /// Driving off again after the dwell.
    Accelerate,
    /// Holding speed while waiting for the braking onset.
    Cruise,
    Brake,
    Dwell { steps_left: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDrivingState {
    pub ego_x: f64,
    pub ego_v: f64,
    pub lead_x: f64,
    pub lead_v: f64,
    pub steps: usize,
    pub lead_brakes: bool,
    pub phase: LeadPhase,
    /// Lead position when braking began, if it has.
    pub brake_onset: Option<f64>,
}

impl ToyDrivingState {
    pub fn observation(&self) -> Vec<f64> {
        vec![self.ego_x, self.ego_v, self.lead_x, self.lead_v]
    }
}

/// Distance covered while braking from `v` to rest at `decel` under the
/// semi-implicit Euler integrator.
pub fn discrete_stopping_distance(v: f64, decel: f64, dt: f64) -> f64 {
    let mut v = v;
    let mut x = 0.0;
    while v > 0.0 {
        v = (v - decel * dt).max(0.0);
        x += v * dt;
    }
    x
}

#[derive(Clone, Debug)]
pub struct ToyDriving {
    pub config: ToyConfig,
    state: ToyDrivingState,
    done: bool,
    rng: ChaCha8Rng,
}

impl ToyDriving {
    pub fn new(config: ToyConfig) -> Self {
        Self {
            config,
            state: ToyDrivingState {
                ego_x: 0.0,
                ego_v: 0.0,
                lead_x: 0.0,
                lead_v: 0.0,
                steps: 0,
                lead_brakes: false,
                phase: LeadPhase::Accelerate,
                brake_onset: None,
            },
            done: true,
            rng: crate::rng::rng(0),
        }
    }

    pub fn state(&self) -> &ToyDrivingState {
        &self.state
    }

    pub fn elapsed(&self) -> f64 {
        self.state.steps as f64 * self.config.dt
    }

    /// Lead acceleration for the coming step; advances the phase machine.
    pub fn lead_brake_controller(&mut self) -> f64 {
        let c = &self.config;
        let s = &mut self.state;
        loop {
            match s.phase {
                LeadPhase::SpeedUp => return c.lead_speedup_accel,
                LeadPhase::Accelerate => return c.lead_accel,
                LeadPhase::Cruise => {
                    // one more step of cruising must still leave room to stop short of the mark
                    let after = s.lead_x + s.lead_v * c.dt;
                    if after + discrete_stopping_distance(s.lead_v, c.lead_max_decel, c.dt) >= c.stop_mark {
                        s.phase = LeadPhase::Brake;
                        s.brake_onset = Some(s.lead_x);
                        continue;
                    }
                    return 0.0;
                }
                LeadPhase::Brake => {
                    if s.lead_v <= 0.0 {
                        let steps = (c.dwell_s / c.dt - 1e-9).ceil() as usize;
                        s.phase = LeadPhase::Dwell { steps_left: steps };
                        continue;
                    }
                    return -c.lead_max_decel;
                }
                LeadPhase::Dwell { steps_left } => {
                    if steps_left == 0 {
                        s.phase = LeadPhase::Accelerate;
                        continue;
                    }
                    s.phase = LeadPhase::Dwell {
                        steps_left: steps_left - 1,
                    };
                    return 0.0;
                }
            }
        }
    }

    pub fn step_accel(&mut self, accel: f64) -> Result<StepResult> {
        if self.done {
            return Err(Error::Env("step called on a finished episode".into()));
        }
        if !accel.is_finite() {
            return Err(Error::Env(format!("non-finite acceleration {accel}")));
        }
        let lead_a = self.lead_brake_controller();
        let c = &self.config;
        let s = &mut self.state;
        let a = accel.clamp(-c.ego_accel_limit, c.ego_accel_limit);

        let x_before = s.ego_x;
        s.ego_v = (s.ego_v + a * c.dt).clamp(c.v_min, c.v_max);
        s.ego_x += s.ego_v * c.dt;
        s.lead_v = (s.lead_v + lead_a * c.dt).clamp(c.v_min, c.v_max);
        s.lead_x += s.lead_v * c.dt;
        s.steps += 1;

        let crash = s.ego_x >= s.lead_x;
        let timeout = !crash && s.steps >= c.max_steps();
        let mut reward = s.ego_x - x_before;
        if crash {
            reward += c.crash_penalty;
        }
        self.done = crash || timeout;
        Ok(StepResult {
            observation: s.observation(),
            reward,
            done: self.done,
            info: StepInfo { crash, timeout },
        })
    }
}

impl Env for ToyDriving {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = crate::rng::rng(seed);
        let c = &self.config;
        let v = self.rng.random_range(c.ego_v0_range.0..=c.ego_v0_range.1);
        let gap = self.rng.random_range(c.gap0_range.0..=c.gap0_range.1);
        let brakes = self.rng.random_bool(c.brake_probability);
        self.state = ToyDrivingState {
            ego_x: 0.0,
            ego_v: v,
            lead_x: gap,
            lead_v: v,
            steps: 0,
            lead_brakes: brakes,
            phase: if brakes { LeadPhase::Cruise } else { LeadPhase::SpeedUp },
            brake_onset: None,
        };
        self.done = false;
        self.state.observation()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        match action {
            [a] => self.step_accel(*a),
            _ => Err(Error::Env(format!("toy env expects 1 action value, got {}", action.len()))),
        }
    }
}
