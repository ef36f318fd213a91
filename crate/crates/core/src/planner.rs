//! Test-time search over every (policy code, world code) pair.
//!
//! Each candidate alternates the policy decoder and the world decoder for
//! `h + 1` steps from the current history. Its value is
//! `Σ_{i=0..h} γ^i r̂_{t+i} + γ^{h+1} R̂_{t+h+1}` in raw units. The chosen policy code
//! maximizes the worst value over world codes (or the best, for the
//! optimistic ablation).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Tape;
use crate::models::{codes_one_hot, SpltModel};
use crate::transformer::SequenceInput;

pub const DEFAULT_LATENT_CAP: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerMode {
    MaxMin,
    MaxMax,
}

impl std::str::FromStr for PlannerMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "maxmin" => Ok(Self::MaxMin),
            "maxmax" => Ok(Self::MaxMax),
            other => Err(format!("unknown planner '{other}', expected maxmin or maxmax")),
        }
    }
}

/// All `c^n` codes (0-based digits), lexicographic with the first digit most
/// significant.
pub fn enumerate_latents(c: usize, n: usize, cap: usize) -> Result<Vec<Vec<usize>>> {
    let count = (c as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if c == 0 || count > cap as u128 {
        return Err(Error::EnumerationCap { count, cap });
    }
    let count = count as usize;
    Ok((0..count)
        .map(|mut k| {
            let mut code = vec![0; n];
            for d in (0..n).rev() {
                code[d] = k % c;
                k /= c;
            }
            code
        })
        .collect())
}

/// Picks `(i*, j*)` from a row-major `rows × cols` value matrix. Lowest index
/// wins every tie; non-finite entries count as −∞.
pub fn select_from_matrix(values: &[f64], rows: usize, cols: usize, mode: PlannerMode) -> (usize, usize) {
    assert!(rows > 0 && cols > 0 && values.len() == rows * cols);
    let v = |i: usize, j: usize| {
        let x = values[i * cols + j];
        if x.is_finite() {
            x
        } else {
            f64::NEG_INFINITY
        }
    };
    let mut best = (0, 0);
    let mut best_value = f64::NAN;
    for i in 0..rows {
        // the row's representative: worst entry for maxmin, best for maxmax
        let mut j_row = 0;
        for j in 1..cols {
            let better = match mode {
                PlannerMode::MaxMin => v(i, j) < v(i, j_row),
                PlannerMode::MaxMax => v(i, j) > v(i, j_row),
            };
            if better {
                j_row = j;
            }
        }
        let value = v(i, j_row);
        if best_value.is_nan() || value > best_value {
            best = (i, j_row);
            best_value = value;
        }
    }
    best
}

/// Raw-unit history of the current episode: states `s_0..s_t` and the actions
/// taken between them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl History {
    pub fn new(first: Vec<f64>) -> Self {
        Self {
            states: vec![first],
            actions: Vec::new(),
        }
    }

    pub fn push(&mut self, action: Vec<f64>, next_state: Vec<f64>) {
        self.actions.push(action);
        self.states.push(next_state);
    }
}

/// One imagined continuation, in raw units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub policy_index: usize,
    pub world_index: usize,
    /// `â_t..â_{t+h}`.
    pub actions: Vec<Vec<f64>>,
    /// `ŝ_{t+1}..ŝ_{t+h+1}`.
    pub states: Vec<Vec<f64>>,
    /// `r̂_t..r̂_{t+h}`.
    pub rewards: Vec<f64>,
    /// `R̂_{t+h+1}`.
    pub terminal_return: f64,
    pub value: f64,
}

/// `Σ_i γ^i r_i + γ^{len} R`.
pub fn candidate_value(rewards: &[f64], terminal_return: f64, gamma: f64) -> f64 {
    let mut total = 0.0;
    let mut g = 1.0;
    for r in rewards {
        total += g * r;
        g *= gamma;
    }
    total + g * terminal_return
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub selected: (usize, usize),
    pub action: Vec<f64>,
    /// `c^{n_π} × c^{n_w}`, row-major.
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    /// Candidates whose value was non-finite and scored as −∞.
    pub flagged: Vec<(usize, usize)>,
    pub candidates: Vec<Candidate>,
}

/// Enumerated codes of a model, cached between plans.
#[derive(Clone, Debug)]
pub struct LatentGrid {
    pub policy: Vec<Vec<usize>>,
    pub world: Vec<Vec<usize>>,
}

impl LatentGrid {
    pub fn new(model: &SpltModel, cap: usize) -> Result<Self> {
        let cfg = &model.config;
        Ok(Self {
            policy: enumerate_latents(cfg.c, cfg.n_pi, cap)?,
            world: enumerate_latents(cfg.c, cfg.n_w, cap)?,
        })
    }
}

/// Rolls out every `(policy code, world code)` pair in `pairs` as one batch.
pub fn generate_candidates(
    model: &SpltModel,
    history: &History,
    grid: &LatentGrid,
    pairs: &[(usize, usize)],
    horizon: usize,
) -> Result<Vec<Candidate>> {
    let cfg = &model.config;
    let (sd, ad) = (cfg.state_dim, cfg.action_dim);
    if history.states.is_empty() || history.actions.len() + 1 != history.states.len() {
        return Err(Error::InvalidArgument(
            "history needs at least one state and one action between consecutive states".into(),
        ));
    }
    if history.states.iter().any(|s| s.len() != sd) || history.actions.iter().any(|a| a.len() != ad) {
        return Err(Error::InvalidArgument("history dimensions do not match the model".into()));
    }
    let n = pairs.len();
    let norm = crate::data::Normalizer::new(model.stats.clone());
    let z_pi = codes_one_hot(&pairs.iter().map(|&(i, _)| grid.policy[i].clone()).collect::<Vec<_>>(), cfg.c);
    let z_w = codes_one_hot(&pairs.iter().map(|&(_, j)| grid.world[j].clone()).collect::<Vec<_>>(), cfg.c);

    // normalized sequences shared by every candidate until they diverge
    let mut states: Vec<Vec<Vec<f64>>> = vec![history.states.iter().map(|s| norm.state(s)).collect(); n];
    let mut actions: Vec<Vec<Vec<f64>>> = vec![history.actions.iter().map(|a| norm.action(a)).collect(); n];
    let mut out: Vec<Candidate> = pairs
        .iter()
        .map(|&(i, j)| Candidate {
            policy_index: i,
            world_index: j,
            actions: Vec::new(),
            states: Vec::new(),
            rewards: Vec::new(),
            terminal_return: 0.0,
            value: 0.0,
        })
        .collect();
    let max_steps = cfg.steps();

    for _ in 0..=horizon {
        // policy step: context ends on the newest state
        let len = states[0].len();
        let steps = len.min(max_steps);
        let first = len - steps;
        let mut s_buf = Vec::with_capacity(n * steps * sd);
        let mut a_buf = Vec::with_capacity(n * steps * ad);
        for b in 0..n {
            for t in first..len {
                s_buf.extend_from_slice(&states[b][t]);
                match actions[b].get(t) {
                    Some(a) => a_buf.extend_from_slice(a),
                    None => a_buf.extend(std::iter::repeat_n(0.0, ad)),
                }
            }
        }
        let pred = {
            let mut tape = Tape::inference(&model.store);
            let z = tape.constant(z_pi.clone());
            let input = SequenceInput {
                batch: n,
                steps,
                states: &s_buf,
                actions: &a_buf,
                returns: None,
                state_valid: None,
                action_valid: None,
            };
            let p = model.policy_decoder.forward(&mut tape, &input, Some(z))?;
            tape.value(p).clone()
        };
        for b in 0..n {
            let a = pred.row(b * steps + steps - 1).to_vec();
            out[b].actions.push(norm.action_inv(&a));
            actions[b].push(a);
        }

        // world step: the same window, now ending on the new action
        let mut a_buf = Vec::with_capacity(n * steps * ad);
        for b in 0..n {
            for t in first..len {
                a_buf.extend_from_slice(&actions[b][t]);
            }
        }
        let (ns, nr, nret) = {
            let mut tape = Tape::inference(&model.store);
            let z = tape.constant(z_w.clone());
            let input = SequenceInput {
                batch: n,
                steps,
                states: &s_buf,
                actions: &a_buf,
                returns: None,
                state_valid: None,
                action_valid: None,
            };
            let o = model.world_decoder.forward(&mut tape, &input, z)?;
            (
                tape.value(o.next_state).clone(),
                tape.value(o.reward).clone(),
                tape.value(o.next_return).clone(),
            )
        };
        for b in 0..n {
            let row = b * steps + steps - 1;
            let s = ns.row(row).to_vec();
            out[b].states.push(norm.state_inv(&s));
            out[b].rewards.push(norm.reward_inv(nr.row(row)[0]));
            out[b].terminal_return = norm.ret_inv(nret.row(row)[0]);
            states[b].push(s);
        }
    }
    for c in &mut out {
        c.value = candidate_value(&c.rewards, c.terminal_return, cfg.gamma);
    }
    Ok(out)
}

/// A single candidate; identical to the matching entry of a batched rollout.
pub fn generate_candidate(
    model: &SpltModel,
    history: &History,
    grid: &LatentGrid,
    policy_index: usize,
    world_index: usize,
    horizon: usize,
) -> Result<Candidate> {
    Ok(generate_candidates(model, history, grid, &[(policy_index, world_index)], horizon)?.remove(0))
}

/// Fills the full value matrix and selects an action.
pub fn select_action(
    model: &SpltModel,
    history: &History,
    grid: &LatentGrid,
    horizon: usize,
    mode: PlannerMode,
) -> Result<PlanResult> {
    let (rows, cols) = (grid.policy.len(), grid.world.len());
    let pairs: Vec<(usize, usize)> = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).collect();
    let candidates = generate_candidates(model, history, grid, &pairs, horizon)?;
    let mut flagged = Vec::new();
    let values: Vec<f64> = candidates
        .iter()
        .map(|c| {
            let finite = c.value.is_finite()
                && c.actions.iter().flatten().all(|v| v.is_finite())
                && c.states.iter().flatten().all(|v| v.is_finite());
            if finite {
                c.value
            } else {
                flagged.push((c.policy_index, c.world_index));
                f64::NEG_INFINITY
            }
        })
        .collect();
    let selected = select_from_matrix(&values, rows, cols, mode);
    let action = candidates[selected.0 * cols + selected.1].actions[0].clone();
    Ok(PlanResult {
        selected,
        action,
        values,
        rows,
        cols,
        flagged,
        candidates,
    })
}
