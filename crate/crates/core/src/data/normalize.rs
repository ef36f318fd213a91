use serde::{Deserialize, Serialize};

use super::EpisodeRecord;

/// Standard deviations below this are floored and flagged.
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Dimensions whose std was raised to [`STD_FLOOR`].
    pub floored: Vec<usize>,
}

impl Moments {
    fn from_rows<'a>(dim: usize, rows: impl Iterator<Item = &'a [f64]> + Clone) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; dim];
        for r in rows.clone() {
            n += 1;
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        let n = n.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in rows {
            for d in 0..dim {
                let e = r[d] - mean[d];
                var[d] += e * e;
            }
        }
        let mut floored = Vec::new();
        let std = var
            .iter()
            .enumerate()
            .map(|(d, v)| {
                let s = (v / n).sqrt();
                if s < STD_FLOOR {
                    floored.push(d);
                    STD_FLOOR
                } else {
                    s
                }
            })
            .collect();
        Self { mean, std, floored }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let d = i % self.mean.len();
                (v - self.mean[d]) / self.std[d]
            })
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let d = i % self.mean.len();
                v * self.std[d] + self.mean[d]
            })
            .collect()
    }

    pub fn normalize_scalar(&self, x: f64) -> f64 {
        (x - self.mean[0]) / self.std[0]
    }

    pub fn denormalize_scalar(&self, x: f64) -> f64 {
        x * self.std[0] + self.mean[0]
    }
}

/// Population statistics: states and returns over every timestep, actions
/// over real (non-placeholder) actions, rewards over real transitions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub states: Moments,
    pub actions: Moments,
    pub rewards: Moments,
    pub returns: Moments,
}

impl NormStats {
    pub fn compute(episodes: &[EpisodeRecord]) -> Self {
        let sd = episodes[0].state_dim;
        let ad = episodes[0].action_dim;
        let states = Moments::from_rows(sd, episodes.iter().flat_map(|e| e.states.chunks_exact(sd)));
        let actions = Moments::from_rows(
            ad,
            episodes
                .iter()
                .flat_map(|e| e.actions.chunks_exact(ad).take(e.transitions())),
        );
        let rewards = Moments::from_rows(
            1,
            episodes
                .iter()
                .flat_map(|e| e.rewards[..e.transitions()].chunks_exact(1)),
        );
        let returns = Moments::from_rows(1, episodes.iter().flat_map(|e| e.returns.chunks_exact(1)));
        Self {
            states,
            actions,
            rewards,
            returns,
        }
    }

    /// Names of statistic groups where a floor was applied.
    pub fn floored(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (name, m) in [
            ("states", &self.states),
            ("actions", &self.actions),
            ("rewards", &self.rewards),
            ("returns", &self.returns),
        ] {
            for d in &m.floored {
                out.push(format!("{name}[{d}]"));
            }
        }
        out
    }
}

/// Thin convenience wrapper over [`NormStats`].
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub stats: NormStats,
}

impl Normalizer {
    pub fn new(stats: NormStats) -> Self {
        Self { stats }
    }

    pub fn state(&self, x: &[f64]) -> Vec<f64> {
        self.stats.states.normalize(x)
    }

    pub fn action(&self, x: &[f64]) -> Vec<f64> {
        self.stats.actions.normalize(x)
    }

    pub fn reward(&self, x: f64) -> f64 {
        self.stats.rewards.normalize_scalar(x)
    }

    pub fn ret(&self, x: f64) -> f64 {
        self.stats.returns.normalize_scalar(x)
    }

    pub fn state_inv(&self, x: &[f64]) -> Vec<f64> {
        self.stats.states.denormalize(x)
    }

    pub fn action_inv(&self, x: &[f64]) -> Vec<f64> {
        self.stats.actions.denormalize(x)
    }

    pub fn reward_inv(&self, x: f64) -> f64 {
        self.stats.rewards.denormalize_scalar(x)
    }

    pub fn ret_inv(&self, x: f64) -> f64 {
        self.stats.returns.denormalize_scalar(x)
    }
}
