//! End-to-end acceptance checks. Each test prints one PASS or FAIL line to
//! stderr, bypassing output capture, and fails when its criterion fails.

mod common;

use std::io::Write;

use common::{brute_force_select, random_history, random_matrix, random_model, scalar_candidate, small_toy_dataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splt_core::data::windows::WindowIndex;
use splt_core::data::{collect_mdp_dataset, sample_windows, Batch, Dataset};
use splt_core::gradcheck::{check_inputs, check_params, numeric_gradient, relative_error, GradReport};
use splt_core::graph::{AttentionShape, Tape, Var};
use splt_core::harness::experiment::{ExperimentConfig, ModelKind};
use splt_core::harness::{evaluate, mdp_experiment, run_pipeline, train};
use splt_core::harness::pipeline::collect;
use splt_core::models::splt::SpltConfig;
use splt_core::models::{
    kl_to_uniform, sample_one_hot, straight_through_sample, BaselineConfig, BaselineKind, BaselineModel, NetConfig,
    SpltModel,
};
use splt_core::planner::{generate_candidate, select_from_matrix, LatentGrid, PlannerMode, DEFAULT_LATENT_CAP};
use splt_core::transformer::SequenceInput;
use splt_core::Tensor;

fn report(n: usize, name: &str, outcome: Result<String, String>) {
    let line = match &outcome {
        Ok(detail) => format!("criterion {n} ({name}): PASS: {detail}"),
        Err(detail) => format!("criterion {n} ({name}): FAIL: {detail}"),
    };
    let _ = writeln!(std::io::stderr(), "{line}");
    if let Err(detail) = outcome {
        panic!("criterion {n} failed: {detail}");
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let shape = tape.shape(x).to_vec();
    let w = random(&mut ChaCha8Rng::seed_from_u64(seed), &shape);
    let w = tape.constant(w);
    let p = tape.mul(x, w).unwrap();
    tape.sum(p)
}

#[test]
fn criterion_1_mdp_optimism_bias() {
    let outcome = (|| {
        let exp = mdp_experiment(&ExperimentConfig::mdp(), 10_000, 100).map_err(|e| e.to_string())?;
        let r = &exp.report;
        let detail = format!(
            "maxmin a2 {:.2}, maxmax a1 {:.2}, DT(10) a1 {:.2}",
            r.splt_maxmin_a2, r.splt_maxmax_a1, r.dt_target10_a1
        );
        ensure(
            r.splt_maxmin_a2 >= 0.95 && r.splt_maxmax_a1 >= 0.95 && r.dt_target10_a1 >= 0.95,
            || detail.clone(),
        )?;
        Ok(detail)
    })();
    report(1, "five-state MDP", outcome);
}

#[test]
fn criterion_2_toy_benchmark() {
    let outcome = (|| {
        let e = |e: splt_core::Error| e.to_string();
        let base = ExperimentConfig::toy_small();
        let dataset = collect(&base, 50_000).map_err(e)?;
        let run = |model: ModelKind, planner: PlannerMode, ckpt: &splt_core::checkpoint::Checkpoint| {
            let mut cfg: ExperimentConfig = serde_json::from_value(ckpt.experiment.clone()).unwrap();
            cfg.model = model;
            cfg.planner = planner;
            evaluate(&cfg, ckpt, false).map(|(m, _)| m)
        };
        let splt = train(&ExperimentConfig { model: ModelKind::Splt, ..base.clone() }, &dataset).map_err(e)?.0;
        let bc = train(&ExperimentConfig { model: ModelKind::Bc, ..base.clone() }, &dataset).map_err(e)?.0;
        let dt = train(&ExperimentConfig { model: ModelKind::Dt, ..base.clone() }, &dataset).map_err(e)?.0;
        let maxmin = run(ModelKind::Splt, PlannerMode::MaxMin, &splt).map_err(e)?;
        let maxmax = run(ModelKind::Splt, PlannerMode::MaxMax, &splt).map_err(e)?;
        let bc = run(ModelKind::Bc, PlannerMode::MaxMin, &bc).map_err(e)?;
        let dt = run(ModelKind::Dt, PlannerMode::MaxMin, &dt).map_err(e)?;
        let mut table = String::new();
        for m in [&maxmin, &maxmax, &bc, &dt] {
            table.push_str(&format!(
                "{}: return {:.1} ± {:.1}, success {:.1}% ± {:.1}; ",
                m.label, m.return_mean, m.return_std, m.success_mean, m.success_std
            ));
        }
        let mut failures = Vec::new();
        if maxmin.success_mean < 95.0 {
            failures.push("maxmin success below 95%");
        }
        if maxmin.return_mean - bc.return_mean < 10.0 {
            failures.push("maxmin return does not beat BC by 10");
        }
        if maxmin.success_mean - maxmax.success_mean < 15.0 {
            failures.push("maxmin success does not beat maxmax by 15 points");
        }
        ensure(failures.is_empty(), || format!("{}; {table}", failures.join(", ")))?;
        Ok(table)
    })();
    report(2, "toy driving benchmark", outcome);
}

fn primitive_reports() -> Vec<(&'static str, GradReport)> {
    const STEP: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut out = Vec::new();
    let two = [random(&mut rng, &[3, 4]), random(&mut rng, &[4, 2])];
    out.push((
        "matmul",
        check_inputs(&two, STEP, |t, v| {
            let y = t.matmul(v[0], v[1])?;
            Ok(weighted_sum(t, y, 1))
        })
        .unwrap(),
    ));
    let ew = [
        random(&mut rng, &[4, 3]),
        random(&mut rng, &[4, 3]),
        random(&mut rng, &[3]),
        random(&mut rng, &[2, 3]),
    ];
    out.push((
        "add, sub, mul, add_row, add_group, scale, reshape",
        check_inputs(&ew, STEP, |t, v| {
            let a = t.add(v[0], v[1])?;
            let s = t.sub(a, v[1])?;
            let m = t.mul(s, v[1])?;
            let r = t.add_row(m, v[2])?;
            let g = t.add_group(r, v[3], 2)?;
            let sc = t.scale(g, -0.7);
            let rs = t.reshape(sc, vec![3, 4])?;
            Ok(weighted_sum(t, rs, 2))
        })
        .unwrap(),
    ));
    let ln = [random(&mut rng, &[3, 5]), random(&mut rng, &[5]), random(&mut rng, &[5])];
    out.push((
        "layer_norm",
        check_inputs(&ln, STEP, |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            Ok(weighted_sum(t, y, 3))
        })
        .unwrap(),
    ));
    let one = [random(&mut rng, &[3, 4])];
    out.push((
        "gelu",
        check_inputs(&one, STEP, |t, v| {
            let y = t.gelu(v[0]);
            Ok(weighted_sum(t, y, 4))
        })
        .unwrap(),
    ));
    out.push((
        "softmax",
        check_inputs(&one, STEP, |t, v| {
            let y = t.softmax(v[0])?;
            Ok(weighted_sum(t, y, 5))
        })
        .unwrap(),
    ));
    let (batch, seq, d) = (2, 4, 6);
    let qkv = [
        random(&mut rng, &[batch * seq, d]),
        random(&mut rng, &[batch * seq, d]),
        random(&mut rng, &[batch * seq, d]),
    ];
    let mask = vec![true, true, false, true, true, true, true, false];
    for causal in [false, true] {
        for key_valid in [None, Some(mask.as_slice())] {
            let shape = AttentionShape {
                batch,
                seq,
                heads: 2,
                causal,
            };
            out.push((
                "attention",
                check_inputs(&qkv, STEP, |t, v| {
                    let y = t.attention(v[0], v[1], v[2], shape, key_valid)?;
                    Ok(weighted_sum(t, y, 6))
                })
                .unwrap(),
            ));
        }
    }
    let st = [random(&mut rng, &[6, 4]), random(&mut rng, &[2, 4])];
    out.push((
        "weighted_pool, concat, gather, slice",
        check_inputs(&st, STEP, |t, v| {
            let pooled = t.weighted_pool(v[0], 3, vec![0.5, 0.5, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])?;
            let both = t.concat_rows(&[pooled, v[1]])?;
            let picked = t.gather_rows(both, vec![3, 0, 0, 2])?;
            let left = t.slice_cols(picked, 0, 1)?;
            let right = t.slice_cols(picked, 1, 3)?;
            let joined = t.concat_cols(&[right, left])?;
            Ok(weighted_sum(t, joined, 7))
        })
        .unwrap(),
    ));
    let target: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    out.push((
        "squared_error, kl_uniform, sum",
        check_inputs(&[random(&mut rng, &[4, 3]), random(&mut rng, &[3, 2])], STEP, |t, v| {
            let se = t.squared_error(v[0], target.clone(), vec![0.25, 0.0, 0.5, 1.0])?;
            let kl = t.kl_uniform(v[1], 0.3)?;
            t.add(se, kl)
        })
        .unwrap(),
    ));
    out
}

fn tiny_splt(d: &Dataset, k: usize, embed_dim: usize, seed: u64) -> SpltModel {
    let cfg = SpltConfig {
        net: NetConfig {
            n_layers: 1,
            n_heads: 2,
            embed_dim,
        },
        context_k: k,
        ..SpltConfig::toy(4, 1)
    };
    SpltModel::new(cfg, d.stats.clone(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn tiny_baseline(d: &Dataset, kind: BaselineKind, k: usize, seed: u64) -> BaselineModel {
    let cfg = BaselineConfig {
        kind,
        net: NetConfig {
            n_layers: 1,
            n_heads: 2,
            embed_dim: 4,
        },
        context_k: k,
        gamma: 0.99,
        discounted_returns: true,
        state_dim: 4,
        action_dim: 1,
    };
    BaselineModel::new(cfg, d.stats.clone(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn batch(d: &Dataset, k: usize, n: usize, seed: u64) -> Batch {
    sample_windows(d, &WindowIndex::new(d), k, n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `z = softmax(logits) + (h − p₀)`: equal in value to the sampled one-hot
/// `h` at the base point, with the straight-through derivative everywhere.
fn probs_path(h: Tensor, p0: Tensor) -> impl Fn(&mut Tape, Var) -> splt_core::Result<Var> {
    let offset = Tensor::new(
        h.shape().to_vec(),
        h.data().iter().zip(p0.data()).map(|(a, b)| a - b).collect(),
    )
    .unwrap();
    move |tape, logits| {
        let p = tape.softmax(logits)?;
        let c = tape.constant(offset.clone());
        tape.add(p, c)
    }
}

fn flat_grads(store: &splt_core::ParamStore, tape: &mut Tape, loss: Var) -> Vec<f64> {
    let g = tape.backward(loss).unwrap();
    store
        .ids()
        .flat_map(|id| g.param(id).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; store.get(id).len()]))
        .collect()
}

fn elbo_reports() -> Result<Vec<(&'static str, GradReport)>, String> {
    let d = small_toy_dataset(1_500, 9);
    let m = tiny_splt(&d, 2, 4, 11);
    ensure(m.store.num_scalars() <= 10_000, || "model too large".into())?;
    let b = batch(&d, 2, 2, 3);
    let p0 = m.encode_policy(&b).unwrap();
    let hp = sample_one_hot(&p0, &mut ChaCha8Rng::seed_from_u64(99));
    let w0 = m.encode_world(&b).unwrap();
    let hw = sample_one_hot(&w0, &mut ChaCha8Rng::seed_from_u64(98));

    // the surrogate reproduces the sampled loss and its gradient exactly
    let mut t1 = Tape::new(&m.store);
    let (l1, v1) = m.policy_loss(&mut t1, &b, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    let mut t2 = Tape::new(&m.store);
    let (l2, v2) = m.policy_loss_with(&mut t2, &b, probs_path(hp.clone(), p0.clone())).unwrap();
    let same = (v1.total - v2.total).abs() < 1e-12
        && flat_grads(&m.store, &mut t1, l1).iter().zip(flat_grads(&m.store, &mut t2, l2)).all(|(x, y)| (x - y).abs() < 1e-12);
    ensure(same, || "policy surrogate differs from the sampled loss".into())?;
    let mut t1 = Tape::new(&m.store);
    let (l1, v1) = m.world_loss(&mut t1, &b, &mut ChaCha8Rng::seed_from_u64(98)).unwrap();
    let mut t2 = Tape::new(&m.store);
    let (l2, v2) = m.world_loss_with(&mut t2, &b, probs_path(hw.clone(), w0.clone())).unwrap();
    let same = (v1.total - v2.total).abs() < 1e-12
        && flat_grads(&m.store, &mut t1, l1).iter().zip(flat_grads(&m.store, &mut t2, l2)).all(|(x, y)| (x - y).abs() < 1e-12);
    ensure(same, || "world surrogate differs from the sampled loss".into())?;

    let policy = check_params(&m.store, &m.policy_params(), 1e-4, |tape| {
        Ok(m.policy_loss_with(tape, &b, probs_path(hp.clone(), p0.clone()))?.0)
    })
    .unwrap();
    let world = check_params(&m.store, &m.world_params(), 1e-4, |tape| {
        Ok(m.world_loss_with(tape, &b, probs_path(hw.clone(), w0.clone()))?.0)
    })
    .unwrap();
    Ok(vec![("policy ELBO", policy), ("world ELBO", world)])
}

#[test]
fn criterion_3_gradient_correctness() {
    let outcome = (|| {
        let mut reports = primitive_reports();
        reports.extend(elbo_reports()?);
        let worst = reports.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max);
        let bad: Vec<String> = reports
            .iter()
            .filter(|(_, r)| r.max_rel_error > 1e-4 || r.checked == 0)
            .map(|(n, r)| format!("{n} {:.2e}", r.max_rel_error))
            .collect();
        ensure(bad.is_empty(), || format!("relative error above 1e-4: {}", bad.join(", ")))?;
        Ok(format!("{} checks, worst relative error {worst:.2e}", reports.len()))
    })();
    report(3, "gradient correctness", outcome);
}

#[test]
fn criterion_4_kl_closed_form() {
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let c = rng.random_range(2..9);
            let n = rng.random_range(1..5);
            let mut q: Vec<f64> = (0..n * c).map(|_| rng.random_range(0.0..1.0f64).powi(3)).collect();
            for row in q.chunks_mut(c) {
                let s: f64 = row.iter().sum();
                row.iter_mut().for_each(|v| *v /= s);
            }
            let entropy_form: f64 = q
                .chunks(c)
                .map(|row| (c as f64).ln() + row.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
                .sum();
            let kl = kl_to_uniform(&Tensor::new(vec![n, c], q).unwrap());
            worst = worst.max((kl - entropy_form).abs());
        }
        ensure(worst <= 1e-9, || format!("max deviation {worst:.2e}"))?;
        for c in 2..9 {
            for n in 1..5 {
                let u = Tensor::new(vec![n, c], vec![1.0 / c as f64; n * c]).unwrap();
                let kl = kl_to_uniform(&u);
                ensure(kl == 0.0, || format!("uniform c={c} n={n} gives {kl:e}"))?;
                let mut tape = Tape::default();
                let l = tape.constant(Tensor::full(&[n, c], rng.random_range(-3.0..3.0)));
                let kl = tape.kl_uniform(l, 1.0).map_err(|e| e.to_string())?;
                let kl = tape.value(kl).item();
                ensure(kl == 0.0, || format!("uniform logits c={c} n={n} give {kl:e}"))?;
            }
        }
        Ok(format!("1000 random inputs, max deviation {worst:.2e}; uniform exactly 0"))
    })();
    report(4, "KL closed form", outcome);
}

#[test]
fn criterion_5_straight_through() {
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mut worst: f64 = 0.0;
        for case in 0..20 {
            let (n, c) = (rng.random_range(1..5), rng.random_range(2..6));
            let logits = random(&mut rng, &[n, c]);
            let w = random(&mut rng, &[n, c]);
            let mut tape = Tape::default();
            let l = tape.input(logits.clone());
            let (z, _) = straight_through_sample(&mut tape, l, &mut rng).unwrap();
            for row in tape.value(z).data().chunks(c) {
                let exact = row.iter().all(|&v| v == 0.0 || v == 1.0) && row.iter().sum::<f64>() == 1.0;
                ensure(exact, || format!("case {case}: row {row:?} is not one-hot"))?;
            }
            let wv = tape.constant(w.clone());
            let prod = tape.mul(z, wv).unwrap();
            let loss = tape.sum(prod);
            let analytic = tape.backward(loss).unwrap().wrt(l).unwrap().clone();
            let numeric = numeric_gradient(&[logits], 1e-5, |t, v| {
                let p = t.softmax(v[0])?;
                let wv = t.constant(w.clone());
                let prod = t.mul(p, wv)?;
                Ok(t.sum(prod))
            })
            .unwrap();
            for (a, b) in analytic.data().iter().zip(numeric[0].data()) {
                worst = worst.max(relative_error(*a, *b));
            }
        }
        ensure(worst <= 1e-4, || format!("relative error {worst:.2e}"))?;
        Ok(format!("20 cases exact one-hot, gradient relative error {worst:.2e}"))
    })();
    report(5, "straight-through contract", outcome);
}

/// Random raw inputs for one sequence of `steps` timesteps.
struct RawSeq {
    states: Vec<f64>,
    actions: Vec<f64>,
    returns: Vec<f64>,
}

impl RawSeq {
    fn random(rng: &mut ChaCha8Rng, steps: usize) -> Self {
        Self {
            states: (0..steps * 4).map(|_| rng.random_range(-2.0..2.0)).collect(),
            actions: (0..steps).map(|_| rng.random_range(-2.0..2.0)).collect(),
            returns: (0..steps).map(|_| rng.random_range(-2.0..2.0)).collect(),
        }
    }

    fn input(&self, steps: usize, with_returns: bool) -> SequenceInput<'_> {
        SequenceInput {
            batch: 1,
            steps,
            states: &self.states,
            actions: &self.actions,
            returns: with_returns.then_some(&self.returns[..]),
            state_valid: None,
            action_valid: None,
        }
    }

    /// Perturbs every token that follows step `p`'s `first_after` token.
    /// Action decoders read the state token, so the action at `p` is later;
    /// the world decoder reads the action token, so only step `p + 1` on is.
    fn perturbed(&self, rng: &mut ChaCha8Rng, p: usize, action_is_later: bool) -> Self {
        let mut out = Self {
            states: self.states.clone(),
            actions: self.actions.clone(),
            returns: self.returns.clone(),
        };
        for v in &mut out.states[(p + 1) * 4..] {
            *v += rng.random_range(-3.0..3.0);
        }
        for v in &mut out.returns[p + 1..] {
            *v += rng.random_range(-3.0..3.0);
        }
        let first_action = if action_is_later { p } else { p + 1 };
        for v in &mut out.actions[first_action..] {
            *v += rng.random_range(-3.0..3.0);
        }
        out
    }
}

fn max_prefix_change(a: &Tensor, b: &Tensor, rows: usize) -> f64 {
    let width = a.shape()[1];
    a.data()[..rows * width]
        .iter()
        .zip(&b.data()[..rows * width])
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn criterion_6_causality() {
    let outcome = (|| {
        let d = small_toy_dataset(1_000, 60);
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let mut worst: f64 = 0.0;
        let mut cases = 0;
        let mut moved: f64 = 0.0;
        for case in 0..100 {
            let k = rng.random_range(1..6);
            let steps = k + 1;
            let p = rng.random_range(0..steps - 1);
            let seed = rng.random();
            let base = RawSeq::random(&mut rng, steps);
            let s = tiny_splt(&d, k, 8, seed);
            let policy_z = sample_one_hot(&Tensor::full(&[s.config.n_pi, s.config.c], 0.5), &mut rng);
            let world_z = sample_one_hot(&Tensor::full(&[s.config.n_w, s.config.c], 0.5), &mut rng);

            let act_pert = base.perturbed(&mut rng, p, true);
            let world_pert = base.perturbed(&mut rng, p, false);
            let policy = |x: &RawSeq| {
                let mut t = Tape::new(&s.store);
                let z = t.constant(policy_z.clone());
                let y = s.policy_decoder.forward(&mut t, &x.input(steps, false), Some(z)).unwrap();
                t.value(y).clone()
            };
            let world = |x: &RawSeq| {
                let mut t = Tape::new(&s.store);
                let z = t.constant(world_z.clone());
                let o = s.world_decoder.forward(&mut t, &x.input(steps, false), z).unwrap();
                [o.next_state, o.reward, o.next_return].map(|v| t.value(v).clone())
            };
            let (before, after) = (policy(&base), policy(&act_pert));
            worst = worst.max(max_prefix_change(&before, &after, p + 1));
            // the perturbation must reach later outputs, or the check is vacuous
            moved = moved.max(max_prefix_change(&before, &after, steps) - max_prefix_change(&before, &after, p + 1));
            for (a, b) in world(&base).iter().zip(world(&world_pert).iter()) {
                worst = worst.max(max_prefix_change(a, b, p + 1));
            }
            for kind in [BaselineKind::Bc, BaselineKind::Dt] {
                let m = tiny_baseline(&d, kind, k, seed);
                let run = |x: &RawSeq| {
                    let mut t = Tape::new(&m.store);
                    let y = m.decoder.forward(&mut t, &x.input(steps, kind == BaselineKind::Dt), None).unwrap();
                    t.value(y).clone()
                };
                worst = worst.max(max_prefix_change(&run(&base), &run(&act_pert), p + 1));
            }
            cases += 1;
            ensure(worst <= 1e-12, || format!("case {case}: prefix output moved by {worst:.2e}"))?;
        }
        ensure(moved > 1e-6, || "perturbations never changed later outputs".into())?;
        Ok(format!("{cases} cases over policy, world, BC and DT decoders, max change {worst:.1e}"))
    })();
    report(6, "causality", outcome);
}

#[test]
fn criterion_7_planner_oracles() {
    let outcome = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for case in 0..1000 {
            let (values, rows, cols) = random_matrix(&mut rng);
            for mode in [PlannerMode::MaxMin, PlannerMode::MaxMax] {
                let got = select_from_matrix(&values, rows, cols, mode);
                let want = brute_force_select(&values, rows, cols, mode);
                ensure(got == want, || format!("matrix {case} {mode:?}: {got:?} vs oracle {want:?}"))?;
            }
        }
        let d = small_toy_dataset(1_000, 71);
        for case in 0..20 {
            let m = random_model(&mut rng, &d.stats);
            let grid = LatentGrid::new(&m, DEFAULT_LATENT_CAP).map_err(|e| e.to_string())?;
            let h = random_history(&mut rng);
            let horizon = rng.random_range(0..6);
            let i = rng.random_range(0..grid.policy.len());
            let j = rng.random_range(0..grid.world.len());
            let cand = generate_candidate(&m, &h, &grid, i, j, horizon).map_err(|e| e.to_string())?;
            let oracle = scalar_candidate(&m, &h, &grid.policy[i], &grid.world[j], horizon);
            let bits = |xs: &[Vec<f64>]| xs.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
            let same = bits(&cand.actions) == bits(&oracle.actions)
                && bits(&cand.states) == bits(&oracle.states)
                && cand.rewards.iter().map(|v| v.to_bits()).eq(oracle.rewards.iter().map(|v| v.to_bits()))
                && cand.terminal_return.to_bits() == oracle.terminal_return.to_bits()
                && cand.value.to_bits() == oracle.value.to_bits();
            ensure(same, || format!("model/history pair {case} differs from the scalar rollout"))?;
        }
        Ok("1000 matrices in both modes match the double loop; 20 rollouts match bitwise".into())
    })();
    report(7, "planner oracle equivalence", outcome);
}

#[test]
fn criterion_8_pipeline_determinism() {
    let outcome = (|| {
        let mut cfg = ExperimentConfig {
            seed: 8,
            net: NetConfig {
                n_layers: 1,
                n_heads: 2,
                embed_dim: 8,
            },
            context_k: 2,
            horizon: 2,
            eval_seeds: vec![0, 1],
            eval_episodes: 2,
            ..ExperimentConfig::default()
        };
        cfg.train.steps = 20;
        cfg.train.batch_size = 8;
        cfg.train.warmup_steps = 5;
        let mut detail = Vec::new();
        for model in [ModelKind::Splt, ModelKind::Bc, ModelKind::Dt] {
            let cfg = ExperimentConfig { model, ..cfg.clone() };
            let a = run_pipeline(&cfg, 2_000).map_err(|e| e.to_string())?;
            let b = run_pipeline(&cfg, 2_000).map_err(|e| e.to_string())?;
            let csv_a = a.metrics.to_csv(None);
            let same = a.metrics == b.metrics && csv_a == b.metrics.to_csv(None) && a.dataset == b.dataset;
            let bits = |m: &splt_core::harness::MetricsReport| {
                m.per_seed.iter().flat_map(|s| [s.mean_return.to_bits(), s.mean_discounted.to_bits()]).collect::<Vec<_>>()
            };
            ensure(same && bits(&a.metrics) == bits(&b.metrics), || format!("{model:?} runs differ"))?;
            detail.push(format!("{} return {:.3}", a.metrics.label, a.metrics.return_mean));
        }
        Ok(format!("identical metrics across repeated runs ({})", detail.join(", ")))
    })();
    report(8, "pipeline determinism", outcome);
}

#[test]
fn criterion_9_data_integrity() {
    let outcome = (|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut episodes = 0;
        for (name, d) in [
            ("toy", small_toy_dataset(5_000, 90)),
            ("mdp", collect_mdp_dataset(2_000, 0.99, 91).unwrap()),
        ] {
            for e in &d.episodes {
                let n = e.timesteps();
                for t in 0..n {
                    let next = if t + 1 < n { e.returns[t + 1] } else { 0.0 };
                    let gap = (e.returns[t] - (e.rewards[t] + d.gamma * next)).abs();
                    ensure(gap <= 1e-9, || format!("{name}: return recursion off by {gap:e} at t={t}"))?;
                }
            }
            episodes += d.episodes.len();
            let norm = d.normalizer();
            let mut worst: f64 = 0.0;
            for e in &d.episodes {
                for (a, b) in e.states.iter().zip(norm.state_inv(&norm.state(&e.states))) {
                    worst = worst.max((a - b).abs());
                }
                for (a, b) in e.actions.iter().zip(norm.action_inv(&norm.action(&e.actions))) {
                    worst = worst.max((a - b).abs());
                }
                for (&r, &g) in e.rewards.iter().zip(&e.returns) {
                    worst = worst.max((norm.reward_inv(norm.reward(r)) - r).abs());
                    worst = worst.max((norm.ret_inv(norm.ret(g)) - g).abs());
                }
            }
            ensure(worst <= 1e-9, || format!("{name}: normalization round trip off by {worst:e}"))?;
            let path = dir.path().join(format!("{name}.spltds"));
            d.save(&path).map_err(|e| e.to_string())?;
            let back = Dataset::load(&path).map_err(|e| e.to_string())?;
            let bits = |d: &Dataset| {
                d.episodes
                    .iter()
                    .flat_map(|e| e.states.iter().chain(&e.actions).chain(&e.rewards).chain(&e.returns).map(|v| v.to_bits()))
                    .collect::<Vec<_>>()
            };
            ensure(back == d && bits(&back) == bits(&d), || format!("{name}: dataset changed on reload"))?;
            let again = dir.path().join(format!("{name}2.spltds"));
            back.save(&again).map_err(|e| e.to_string())?;
            let same_file = std::fs::read(&path).map_err(|e| e.to_string())? == std::fs::read(&again).map_err(|e| e.to_string())?;
            ensure(same_file, || format!("{name}: re-saved file differs"))?;
        }
        Ok(format!("{episodes} episodes: recursion, normalization and bitwise file round trip hold"))
    })();
    report(9, "data integrity", outcome);
}
