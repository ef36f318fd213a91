use rand::Rng;
use serde_json::json;

use super::idm::{idm_toy_action, IdmDistribution};
use super::{discounted_returns, Dataset, DoneReason, EpisodeRecord};
use crate::env::mdp::action_one_hot;
use crate::env::{Env, EnvConfig, FiveStateMdp, ToyConfig, ToyDriving};
use crate::error::Result;
use crate::rng::{derive, rng};

/// Runs one episode of `env` from `seed`, asking `policy` for each action.
pub fn rollout<F>(env: &mut dyn Env, seed: u64, gamma: f64, controller: &str, mut policy: F) -> Result<EpisodeRecord>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let (sd, ad) = (env.state_dim(), env.action_dim());
    let mut obs = env.reset(seed);
    let mut states = obs.clone();
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let done = loop {
        let a = policy(&obs)?;
        let r = env.step(&a)?;
        actions.extend_from_slice(&a);
        rewards.push(r.reward);
        states.extend_from_slice(&r.observation);
        obs = r.observation;
        if r.done {
            break if r.info.crash {
                DoneReason::Crash
            } else if r.info.timeout {
                DoneReason::Timeout
            } else {
                DoneReason::Terminal
            };
        }
    };
    actions.extend(std::iter::repeat_n(0.0, ad));
    rewards.push(0.0);
    debug_assert_eq!(states.len(), rewards.len() * sd);
    Ok(EpisodeRecord {
        state_dim: sd,
        action_dim: ad,
        states,
        actions,
        returns: discounted_returns(&rewards, gamma),
        rewards,
        done,
        controller: controller.to_string(),
        seed,
    })
}

/// Rolls IDM controllers with per-episode parameters drawn from `dist` until
/// at least `n_steps` transitions are logged.
pub fn collect_toy_dataset(
    n_steps: usize,
    dist: &IdmDistribution,
    config: &ToyConfig,
    gamma: f64,
    seed: u64,
) -> Result<Dataset> {
    let mut env = ToyDriving::new(config.clone());
    let limit = config.ego_accel_limit;
    let mut episodes = Vec::new();
    let mut total = 0;
    let mut i = 0u64;
    while total < n_steps {
        let params = dist.sample(&mut rng(derive(seed, 2 * i + 1)));
        let ep = rollout(&mut env, derive(seed, 2 * i), gamma, &params.label(), |obs| {
            Ok(vec![idm_toy_action(obs, &params, limit)])
        })?;
        total += ep.transitions();
        episodes.push(ep);
        i += 1;
    }
    Dataset::from_episodes(
        EnvConfig::Toy(config.clone()),
        gamma,
        episodes,
        json!({"collector": "idm", "distribution": dist, "target_steps": n_steps, "seed": seed}),
    )
}

/// Uniform-random actions at s0; every episode is one transition.
pub fn collect_mdp_dataset(n_steps: usize, gamma: f64, seed: u64) -> Result<Dataset> {
    let mut env = FiveStateMdp::new();
    let mut episodes = Vec::with_capacity(n_steps);
    for i in 0..n_steps as u64 {
        let mut pick = rng(derive(seed, 2 * i + 1));
        let ep = rollout(&mut env, derive(seed, 2 * i), gamma, "uniform", |_| {
            Ok(action_one_hot(pick.random_range(0..2)))
        })?;
        episodes.push(ep);
    }
    Dataset::from_episodes(
        EnvConfig::Mdp,
        gamma,
        episodes,
        json!({"collector": "uniform", "target_steps": n_steps, "seed": seed}),
    )
}
