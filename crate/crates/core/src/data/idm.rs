//! Intelligent Driver Model controllers.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired speed (m/s).
    pub v0: f64,
    /// Time headway (s).
    pub headway: f64,
    /// Jam distance (m).
    pub s0: f64,
    pub a_max: f64,
    /// Comfortable deceleration (m/s²).
    pub b: f64,
    pub delta: f64,
}

impl IdmParams {
    pub fn label(&self) -> String {
        format!("idm(T={:.3},s0={:.3})", self.headway, self.s0)
    }
}

/// Desired gap `s*`. The dynamic term is floored at zero so an opening gap
/// never asks for a negative spacing.
pub fn desired_gap(v: f64, dv: f64, p: &IdmParams) -> f64 {
    p.s0 + (v * p.headway + v * dv / (2.0 * (p.a_max * p.b).sqrt())).max(0.0)
}

/// IDM acceleration for gap `s`, speed `v` and approach rate `dv = v − v_lead`,
/// clipped to `[-limit, limit]`. A non-positive gap brakes at the limit.
pub fn idm_acceleration(s: f64, v: f64, dv: f64, p: &IdmParams, limit: f64) -> f64 {
    if s <= 0.0 {
        return -limit;
    }
    let ratio = desired_gap(v, dv, p) / s;
    let a = p.a_max * (1.0 - (v / p.v0).powf(p.delta) - ratio * ratio);
    a.clamp(-limit, limit)
}

/// Spread of controller aggressiveness the dataset is collected with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdmDistribution {
    pub headway: (f64, f64),
    pub s0: (f64, f64),
    pub v0: f64,
    pub a_max: f64,
    pub b: f64,
    pub delta: f64,
}

impl Default for IdmDistribution {
    fn default() -> Self {
        Self {
            headway: (0.5, 2.0),
            s0: (1.0, 4.0),
            v0: 10.0,
            a_max: 2.0,
            b: 1.0,
            delta: 4.0,
        }
    }
}

impl IdmDistribution {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> IdmParams {
        self.at(rng.random_range(self.headway.0..=self.headway.1), rng.random_range(self.s0.0..=self.s0.1))
    }

    pub fn at(&self, headway: f64, s0: f64) -> IdmParams {
        IdmParams {
            v0: self.v0,
            headway,
            s0,
            a_max: self.a_max,
            b: self.b,
            delta: self.delta,
        }
    }

    /// Evenly spaced `n × n` grid over the support.
    pub fn grid(&self, n: usize) -> Vec<IdmParams> {
        let lerp = |(lo, hi): (f64, f64), i: usize| if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(self.at(lerp(self.headway, i), lerp(self.s0, j)));
            }
        }
        out
    }
}

/// IDM acting on a toy-env observation `[ego x, ego v, lead x, lead v]`.
pub fn idm_toy_action(obs: &[f64], p: &IdmParams, limit: f64) -> f64 {
    idm_acceleration(obs[2] - obs[0], obs[1], obs[1] - obs[3], p, limit)
}
