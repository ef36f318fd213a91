//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splt_core::data::{collect_toy_dataset, Dataset, IdmDistribution, NormStats};
use splt_core::env::ToyConfig;
use splt_core::graph::Tape;
use splt_core::models::splt::SpltConfig;
use splt_core::models::{NetConfig, SpltModel};
use splt_core::planner::{History, PlannerMode};
use splt_core::transformer::SequenceInput;
use splt_core::Tensor;

pub fn small_toy_dataset(steps: usize, seed: u64) -> Dataset {
    collect_toy_dataset(steps, &IdmDistribution::default(), &ToyConfig::default(), 0.99, seed).unwrap()
}

/// Plain double loop: score every row, keep the first best row, then the
/// first column attaining that row's score.
pub fn brute_force_select(values: &[f64], rows: usize, cols: usize, mode: PlannerMode) -> (usize, usize) {
    let clean: Vec<f64> = values.iter().map(|&v| if v.is_finite() { v } else { f64::NEG_INFINITY }).collect();
    let mut scores = Vec::with_capacity(rows);
    for i in 0..rows {
        let row = &clean[i * cols..(i + 1) * cols];
        let score = match mode {
            PlannerMode::MaxMin => row.iter().cloned().fold(f64::INFINITY, f64::min),
            PlannerMode::MaxMax => row.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        };
        scores.push(score);
    }
    let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let i = scores.iter().position(|&s| s == top).unwrap();
    let j = clean[i * cols..(i + 1) * cols].iter().position(|&v| v == scores[i]).unwrap();
    (i, j)
}

/// Random matrix with frequent ties and the occasional non-finite entry.
pub fn random_matrix(rng: &mut ChaCha8Rng) -> (Vec<f64>, usize, usize) {
    let rows = rng.random_range(1..9);
    let cols = rng.random_range(1..9);
    let values = (0..rows * cols)
        .map(|_| match rng.random_range(0..40) {
            0 => f64::NAN,
            1 => f64::INFINITY,
            2..=20 => rng.random_range(-5..6) as f64,
            _ => rng.random_range(-100.0..100.0),
        })
        .collect();
    (values, rows, cols)
}

/// A small SPLT model with random configuration, trained for nothing.
pub fn random_model(rng: &mut ChaCha8Rng, stats: &NormStats) -> SpltModel {
    let heads = [1, 2][rng.random_range(0..2)];
    let cfg = SpltConfig {
        net: NetConfig {
            n_layers: rng.random_range(1..3),
            n_heads: heads,
            embed_dim: heads * rng.random_range(2..6),
        },
        c: rng.random_range(2..4),
        n_w: rng.random_range(1..3),
        n_pi: rng.random_range(1..3),
        context_k: rng.random_range(1..5),
        ..SpltConfig::toy(4, 1)
    };
    SpltModel::new(cfg, stats.clone(), &mut ChaCha8Rng::seed_from_u64(rng.random())).unwrap()
}

/// Random raw-unit history of 1..=8 states in roughly toy ranges.
pub fn random_history(rng: &mut ChaCha8Rng) -> History {
    let state = |rng: &mut ChaCha8Rng| {
        vec![
            rng.random_range(0.0..60.0),
            rng.random_range(0.0..10.0),
            rng.random_range(10.0..80.0),
            rng.random_range(0.0..10.0),
        ]
    };
    let mut h = History::new(state(rng));
    let len = rng.random_range(0..8);
    for _ in 0..len {
        let a = vec![rng.random_range(-1.0..1.0)];
        let s = state(rng);
        h.push(a, s);
    }
    h
}

pub struct ScalarCandidate {
    pub actions: Vec<Vec<f64>>,
    pub states: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub terminal_return: f64,
    pub value: f64,
}

fn one_hot(code: &[usize], c: usize) -> Tensor {
    let mut data = vec![0.0; code.len() * c];
    for (k, &d) in code.iter().enumerate() {
        data[k * c + d] = 1.0;
    }
    Tensor::new(vec![code.len(), c], data).unwrap()
}

/// One candidate rolled out step by step with one sequence at a time:
/// predict an action from the last K+1 steps, append it, predict the next
/// state, reward and return from the same steps, append the state, repeat.
pub fn scalar_candidate(
    model: &SpltModel,
    history: &History,
    policy_code: &[usize],
    world_code: &[usize],
    horizon: usize,
) -> ScalarCandidate {
    let cfg = &model.config;
    let st = &model.stats;
    let norm = |x: &[f64], m: &splt_core::data::normalize::Moments| -> Vec<f64> {
        x.iter().zip(m.mean.iter().zip(&m.std)).map(|(v, (mu, sd))| (v - mu) / sd).collect()
    };
    let denorm = |x: &[f64], m: &splt_core::data::normalize::Moments| -> Vec<f64> {
        x.iter().zip(m.mean.iter().zip(&m.std)).map(|(v, (mu, sd))| v * sd + mu).collect()
    };
    let mut states: Vec<Vec<f64>> = history.states.iter().map(|s| norm(s, &st.states)).collect();
    let mut actions: Vec<Vec<f64>> = history.actions.iter().map(|a| norm(a, &st.actions)).collect();
    let mut out = ScalarCandidate {
        actions: vec![],
        states: vec![],
        rewards: vec![],
        terminal_return: 0.0,
        value: 0.0,
    };
    let window = cfg.context_k + 1;
    for _ in 0..=horizon {
        let from = states.len().saturating_sub(window);
        let steps = states.len() - from;
        let s_flat: Vec<f64> = states[from..].concat();
        let mut a_flat: Vec<f64> = actions[from..].concat();
        a_flat.resize(steps * cfg.action_dim, 0.0);
        let mut tape = Tape::inference(&model.store);
        let z = tape.constant(one_hot(policy_code, cfg.c));
        let input = SequenceInput {
            batch: 1,
            steps,
            states: &s_flat,
            actions: &a_flat,
            returns: None,
            state_valid: None,
            action_valid: None,
        };
        let pred = model.policy_decoder.forward(&mut tape, &input, Some(z)).unwrap();
        let a = tape.value(pred).row(steps - 1).to_vec();
        out.actions.push(denorm(&a, &st.actions));
        actions.push(a);

        let a_flat: Vec<f64> = actions[from..].concat();
        let mut tape = Tape::inference(&model.store);
        let z = tape.constant(one_hot(world_code, cfg.c));
        let input = SequenceInput {
            batch: 1,
            steps,
            states: &s_flat,
            actions: &a_flat,
            returns: None,
            state_valid: None,
            action_valid: None,
        };
        let o = model.world_decoder.forward(&mut tape, &input, z).unwrap();
        let s = tape.value(o.next_state).row(steps - 1).to_vec();
        let r = tape.value(o.reward).row(steps - 1)[0];
        let big_r = tape.value(o.next_return).row(steps - 1)[0];
        out.states.push(denorm(&s, &st.states));
        out.rewards.push(denorm(&[r], &st.rewards)[0]);
        out.terminal_return = denorm(&[big_r], &st.returns)[0];
        states.push(s);
    }
    let mut discount = 1.0;
    for r in &out.rewards {
        out.value += discount * r;
        discount *= cfg.gamma;
    }
    out.value += discount * out.terminal_return;
    out
}
