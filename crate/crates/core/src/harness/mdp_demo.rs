//! Action preferences at s0 of the five-state MDP for the max-min planner,
//! the optimistic planner, and return-conditioned policies.

use serde::{Deserialize, Serialize};

use super::agents::{Agent, DtAgent, SpltAgent};
use super::eval::episode_seed;
use crate::data::Normalizer;
use crate::env::mdp::{action_one_hot, argmax};
use crate::env::{Env, FiveStateMdp, MdpState};
use crate::error::Result;
use crate::graph::Tape;
use crate::models::{codes_one_hot, BaselineModel, SpltModel};
use crate::planner::{enumerate_latents, PlannerMode, DEFAULT_LATENT_CAP};
use crate::transformer::SequenceInput;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldPrediction {
    /// 0 for a1, 1 for a2.
    pub action: usize,
    pub world_code: Vec<usize>,
    pub next_state: Vec<f64>,
    pub nearest_state: String,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpReport {
    pub decisions: usize,
    /// Fraction of decisions choosing a2 under max-min planning.
    pub splt_maxmin_a2: f64,
    /// Fraction choosing a1 under max-max planning.
    pub splt_maxmax_a1: f64,
    /// Fraction choosing a1 when conditioned on a return of 10.
    pub dt_target10_a1: f64,
    /// Fraction choosing a2 when conditioned on a return of 5.
    pub dt_target5_a2: f64,
    pub world_predictions: Vec<WorldPrediction>,
    /// Planner value matrix at s0 (rows: policy codes, columns: world codes).
    pub plan_values: Vec<f64>,
}

fn frequency(agent: &mut dyn Agent, decisions: usize, seed: u64, action: usize) -> Result<f64> {
    let mut env = FiveStateMdp::new();
    let mut hits = 0;
    for d in 0..decisions {
        let obs = env.reset(episode_seed(seed, d));
        agent.begin(&obs)?;
        if argmax(&agent.act()?) == action {
            hits += 1;
        }
    }
    Ok(hits as f64 / decisions as f64)
}

pub fn run_mdp_demo(splt: &SpltModel, dt: &BaselineModel, decisions: usize, seed: u64) -> Result<MdpReport> {
    let mut maxmin = SpltAgent::new(splt, 0, PlannerMode::MaxMin, DEFAULT_LATENT_CAP)?;
    let mut maxmax = SpltAgent::new(splt, 0, PlannerMode::MaxMax, DEFAULT_LATENT_CAP)?;
    maxmin.keep_plans = true;
    let splt_maxmin_a2 = frequency(&mut maxmin, decisions, seed, 1)?;
    let splt_maxmax_a1 = frequency(&mut maxmax, decisions, seed, 0)?;
    let dt_target10_a1 = frequency(&mut DtAgent::new(dt, 10.0), decisions, seed, 0)?;
    let dt_target5_a2 = frequency(&mut DtAgent::new(dt, 5.0), decisions, seed, 1)?;
    let plan_values = maxmin.plans.last().map(|p| p.values.clone()).unwrap_or_default();

    let norm = Normalizer::new(splt.stats.clone());
    let s0 = norm.state(&MdpState::S0.one_hot());
    let codes = enumerate_latents(splt.config.c, splt.config.n_w, DEFAULT_LATENT_CAP)?;
    let mut world_predictions = Vec::new();
    for action in 0..2 {
        let a = norm.action(&action_one_hot(action));
        for code in &codes {
            let mut tape = Tape::inference(&splt.store);
            let z = tape.constant(codes_one_hot(std::slice::from_ref(code), splt.config.c));
            let input = SequenceInput {
                batch: 1,
                steps: 1,
                states: &s0,
                actions: &a,
                returns: None,
                state_valid: None,
                action_valid: None,
            };
            let out = splt.world_decoder.forward(&mut tape, &input, z)?;
            let next_state = norm.state_inv(tape.value(out.next_state).data());
            world_predictions.push(WorldPrediction {
                action,
                world_code: code.clone(),
                nearest_state: format!("{:?}", MdpState::decode(&next_state)),
                next_state,
                reward: norm.reward_inv(tape.value(out.reward).item()),
            });
        }
    }
    Ok(MdpReport {
        decisions,
        splt_maxmin_a2,
        splt_maxmax_a1,
        dt_target10_a1,
        dt_target5_a2,
        world_predictions,
        plan_values,
    })
}
