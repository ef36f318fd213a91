//! Adam with decoupled weight decay, and the linear-warmup schedule.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graph::Gradients;
use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.get(id).len()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, id: ParamId) -> &[f64] {
        &self.m[id.index()]
    }

    pub fn second_moment(&self, id: ParamId) -> &[f64] {
        &self.v[id.index()]
    }

    /// One bias-corrected Adam update at learning rate `lr`. Parameters absent
    /// from `grads` are left untouched. Rejects the whole step, before any
    /// parameter moves, if a gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(shape_err(
                "adam_step",
                format!("state tracks {} parameters, store has {}", self.m.len(), store.len()),
            ));
        }
        for (id, g) in grads.params() {
            if g.shape() != store.get(id).shape() {
                return Err(shape_err(
                    "adam_step",
                    format!("gradient {:?} for parameter {:?}", g.shape(), store.get(id).shape()),
                ));
            }
            if !g.all_finite() {
                return Err(Error::NonFinite("adam_step gradient"));
            }
        }
        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (id, g) in grads.params() {
            let decay = store.entry(id).decay;
            let m = &mut self.m[id.index()];
            let v = &mut self.v[id.index()];
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                if decay && weight_decay != 0.0 {
                    p[i] -= lr * weight_decay * p[i];
                }
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// `base_lr · min(1, step / warmup_steps)`, constant after warmup.
pub fn lr_schedule(step: u64, warmup_steps: u64, base_lr: f64) -> f64 {
    let warmup = warmup_steps.max(1);
    base_lr * (step as f64 / warmup as f64).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Tape;
    use crate::tensor::Tensor;

    fn store_with(values: &[f64], decay: bool) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add(
            "p",
            Tensor::new(vec![values.len()], values.to_vec()).unwrap(),
            decay,
        );
        (store, id)
    }

    fn grads_for(store: &ParamStore, id: ParamId, g: &[f64]) -> Gradients {
        // loss = Σ g_i · p_i has gradient g
        let mut tape = Tape::new(store);
        let p = tape.param(id);
        let c = tape.constant(Tensor::new(vec![g.len()], g.to_vec()).unwrap());
        let prod = tape.mul(p, c).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_is_identity() {
        let (mut store, id) = store_with(&[0.5, -2.0, 3.0], true);
        let before = store.get(id).clone();
        let grads = grads_for(&store, id, &[0.0, 0.0, 0.0]);
        let mut adam = AdamState::new(
            &store,
            AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
        );
        for _ in 0..5 {
            adam.step(&mut store, &grads, 1e-3).unwrap();
        }
        assert_eq!(store.get(id), &before);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let (mut store, id) = store_with(&[1.0, 1.0, 1.0], true);
        let grads = grads_for(&store, id, &[0.3, -2.0, 5e-3]);
        let mut adam = AdamState::new(
            &store,
            AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
        );
        let lr = 1e-3;
        adam.step(&mut store, &grads, lr).unwrap();
        let expected = [1.0 - lr, 1.0 + lr, 1.0 - lr];
        for (p, e) in store.get(id).data().iter().zip(expected) {
            assert!((p - e).abs() < 1e-8, "{p} vs {e}");
        }
    }

    #[test]
    fn decay_only_shrinks_geometrically() {
        let (mut store, id) = store_with(&[2.0, -4.0], true);
        let grads = grads_for(&store, id, &[0.0, 0.0]);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        for _ in 0..3 {
            adam.step(&mut store, &grads, 1e-4).unwrap();
        }
        let f = (1.0f64 - 1e-5).powi(3);
        assert!((store.get(id).data()[0] - 2.0 * f).abs() < 1e-15);
        assert!((store.get(id).data()[1] + 4.0 * f).abs() < 1e-15);
    }

    #[test]
    fn decay_skips_excluded_parameters() {
        let (mut store, id) = store_with(&[2.0], false);
        let grads = grads_for(&store, id, &[0.0]);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        adam.step(&mut store, &grads, 1e-2).unwrap();
        assert_eq!(store.get(id).data(), &[2.0]);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_moving() {
        let (mut store, id) = store_with(&[1.0, 2.0], true);
        let grads = grads_for(&store, id, &[f64::NAN, 1.0]);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        assert!(matches!(
            adam.step(&mut store, &grads, 1e-3),
            Err(Error::NonFinite(_))
        ));
        assert_eq!(store.get(id).data(), &[1.0, 2.0]);
        assert_eq!(adam.steps(), 0);
    }

    #[test]
    fn moments_track_parameter_shapes() {
        let (store, id) = store_with(&[1.0, 2.0, 3.0], true);
        let adam = AdamState::new(&store, AdamConfig::default());
        assert_eq!(adam.first_moment(id).len(), 3);
        assert_eq!(adam.second_moment(id).len(), 3);
    }

    #[test]
    fn warmup_schedule() {
        assert_eq!(lr_schedule(0, 100, 1e-4), 0.0);
        assert_eq!(lr_schedule(100, 100, 1e-4), 1e-4);
        assert_eq!(lr_schedule(50, 100, 1e-4), 0.5e-4);
        assert_eq!(lr_schedule(10_000, 100, 1e-4), 1e-4);
    }
}
