//! Central finite-difference checks for the tape.
//!
//! The numeric side only ever evaluates forward passes, so it stays
//! independent of every backward rule it is used to verify.

use crate::error::Result;
use crate::graph::{Tape, Var};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Denominator floor for the relative error, so that coordinates whose true
/// derivative is ~0 are judged on absolute error instead.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// (input or parameter index, element, analytic, numeric) at the worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradReport {
    fn record(&mut self, which: usize, elem: usize, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let rel = relative_error(analytic, numeric);
        self.checked += 1;
        self.max_abs_error = self.max_abs_error.max(abs);
        if rel > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = Some((which, elem, analytic, numeric));
        }
    }
}

/// Checks d f / d inputs for a scalar-valued `f` built on a fresh tape.
pub fn check_inputs<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::default();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::default();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut report = GradReport::default();
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .wrt(vars[i])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.len()]);
        for e in 0..input.len() {
            let orig = input.data()[e];
            work[i].data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            report.record(i, e, analytic[e], (plus - minus) / (2.0 * step));
        }
    }
    Ok(report)
}

/// Central-difference gradient of a scalar `f` with respect to each input.
pub fn numeric_gradient<F>(inputs: &[Tensor], step: f64, f: F) -> Result<Vec<Tensor>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::default();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let mut g = Tensor::zeros(input.shape());
        for e in 0..input.len() {
            let orig = input.data()[e];
            work[i].data_mut()[e] = orig + step;
            let plus = eval(&work)?;
            work[i].data_mut()[e] = orig - step;
            let minus = eval(&work)?;
            work[i].data_mut()[e] = orig;
            g.data_mut()[e] = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

/// Relative error with the [`REL_FLOOR`] denominator floor.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks d f / d params for every parameter in `ids`.
pub fn check_params<F>(store: &ParamStore, ids: &[ParamId], step: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let grads = {
        let mut tape = Tape::new(store);
        let loss = f(&mut tape)?;
        tape.backward(loss)?
    };
    let mut work = store.clone();
    let mut report = GradReport::default();
    for &id in ids {
        let n = store.get(id).len();
        let analytic = grads
            .param(id)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; n]);
        for e in 0..n {
            let orig = store.get(id).data()[e];
            let mut at = |delta: f64| -> Result<f64> {
                work.get_mut(id).data_mut()[e] = orig + delta;
                let mut tape = Tape::inference(&work);
                let out = f(&mut tape)?;
                Ok(tape.value(out).item())
            };
            let numeric = (8.0 * (at(step)? - at(-step)?) - (at(2.0 * step)? - at(-2.0 * step)?)) / (12.0 * step);
            work.get_mut(id).data_mut()[e] = orig;
            report.record(id.index(), e, analytic[e], numeric);
        }
    }
    Ok(report)
}
