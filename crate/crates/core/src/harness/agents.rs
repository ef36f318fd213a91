//! Closed-loop controllers for evaluation.

use serde::{Deserialize, Serialize};

use crate::data::idm::{idm_toy_action, IdmParams};
use crate::data::Normalizer;
use crate::error::Result;
use crate::graph::Tape;
use crate::models::baseline::next_return_to_go;
use crate::models::{BaselineKind, BaselineModel, SpltModel};
use crate::planner::{select_action, History, LatentGrid, PlanResult, PlannerMode};
use crate::transformer::SequenceInput;

pub trait Agent {
    fn begin(&mut self, observation: &[f64]) -> Result<()>;
    fn act(&mut self) -> Result<Vec<f64>>;
    fn record(&mut self, action: &[f64], reward: f64, next_observation: &[f64]);
}

pub struct IdmAgent {
    pub params: IdmParams,
    pub limit: f64,
    obs: Vec<f64>,
}

impl IdmAgent {
    pub fn new(params: IdmParams, limit: f64) -> Self {
        Self {
            params,
            limit,
            obs: Vec::new(),
        }
    }
}

impl Agent for IdmAgent {
    fn begin(&mut self, observation: &[f64]) -> Result<()> {
        self.obs = observation.to_vec();
        Ok(())
    }

    fn act(&mut self) -> Result<Vec<f64>> {
        Ok(vec![idm_toy_action(&self.obs, &self.params, self.limit)])
    }

    fn record(&mut self, _: &[f64], _: f64, next: &[f64]) {
        self.obs = next.to_vec();
    }
}

/// Replans with the latent search at every step.
pub struct SpltAgent<'m> {
    pub model: &'m SpltModel,
    pub grid: LatentGrid,
    pub horizon: usize,
    pub mode: PlannerMode,
    history: History,
    /// Plans of the current episode, kept when `keep_plans` is set.
    pub plans: Vec<PlanResult>,
    pub keep_plans: bool,
    /// Value matrix and selection of every plan since construction, kept
    /// when set to `Some`.
    pub trace: Option<Vec<PlanTrace>>,
    episode: usize,
    step: usize,
}

/// Compact record of one planning step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanTrace {
    pub episode: usize,
    pub step: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major R̂ matrix; non-finite entries are written as null.
    pub values: Vec<f64>,
    pub selected: (usize, usize),
    pub flagged: Vec<(usize, usize)>,
    pub action: Vec<f64>,
}

impl<'m> SpltAgent<'m> {
    pub fn new(model: &'m SpltModel, horizon: usize, mode: PlannerMode, cap: usize) -> Result<Self> {
        Ok(Self {
            model,
            grid: LatentGrid::new(model, cap)?,
            horizon,
            mode,
            history: History::default(),
            plans: Vec::new(),
            keep_plans: false,
            trace: None,
            episode: 0,
            step: 0,
        })
    }
}

impl Agent for SpltAgent<'_> {
    fn begin(&mut self, observation: &[f64]) -> Result<()> {
        if self.history.states.is_empty() {
            self.episode = 0;
        } else {
            self.episode += 1;
        }
        self.step = 0;
        self.history = History::new(observation.to_vec());
        self.plans.clear();
        Ok(())
    }

    fn act(&mut self) -> Result<Vec<f64>> {
        let plan = select_action(self.model, &self.history, &self.grid, self.horizon, self.mode)?;
        let a = plan.action.clone();
        if let Some(trace) = &mut self.trace {
            trace.push(PlanTrace {
                episode: self.episode,
                step: self.step,
                rows: plan.rows,
                cols: plan.cols,
                values: plan.values.clone(),
                selected: plan.selected,
                flagged: plan.flagged.clone(),
                action: a.clone(),
            });
        }
        self.step += 1;
        if self.keep_plans {
            self.plans.push(plan);
        }
        Ok(a)
    }

    fn record(&mut self, action: &[f64], _: f64, next: &[f64]) {
        self.history.push(action.to_vec(), next.to_vec());
    }
}

/// Shared history handling of the BC and DT agents.
struct BaselineRunner<'m> {
    model: &'m BaselineModel,
    norm: Normalizer,
    history: History,
    returns_to_go: Vec<f64>,
}

impl<'m> BaselineRunner<'m> {
    fn new(model: &'m BaselineModel) -> Self {
        Self {
            model,
            norm: Normalizer::new(model.stats.clone()),
            history: History::default(),
            returns_to_go: Vec::new(),
        }
    }

    /// Predicted action at the newest state, context cropped to `K + 1` steps.
    fn predict(&self) -> Result<Vec<f64>> {
        let cfg = &self.model.config;
        let len = self.history.states.len();
        let steps = len.min(cfg.steps());
        let first = len - steps;
        let mut s = Vec::new();
        let mut a = Vec::new();
        let mut r = Vec::new();
        for t in first..len {
            s.extend(self.norm.state(&self.history.states[t]));
            match self.history.actions.get(t) {
                Some(x) => a.extend(self.norm.action(x)),
                None => a.extend(std::iter::repeat_n(0.0, cfg.action_dim)),
            }
            if cfg.kind == BaselineKind::Dt {
                r.push(self.norm.ret(self.returns_to_go[t]));
            }
        }
        let mut tape = Tape::inference(&self.model.store);
        let input = SequenceInput {
            batch: 1,
            steps,
            states: &s,
            actions: &a,
            returns: (cfg.kind == BaselineKind::Dt).then_some(&r[..]),
            state_valid: None,
            action_valid: None,
        };
        let pred = self.model.decoder.forward(&mut tape, &input, None)?;
        Ok(self.norm.action_inv(tape.value(pred).row(steps - 1)))
    }
}

pub struct BcAgent<'m>(BaselineRunner<'m>);

impl<'m> BcAgent<'m> {
    pub fn new(model: &'m BaselineModel) -> Self {
        Self(BaselineRunner::new(model))
    }
}

impl Agent for BcAgent<'_> {
    fn begin(&mut self, observation: &[f64]) -> Result<()> {
        self.0.history = History::new(observation.to_vec());
        Ok(())
    }

    fn act(&mut self) -> Result<Vec<f64>> {
        self.0.predict()
    }

    fn record(&mut self, action: &[f64], _: f64, next: &[f64]) {
        self.0.history.push(action.to_vec(), next.to_vec());
    }
}

/// Return-conditioned agent; the conditioning value is decremented by each
/// observed reward.
pub struct DtAgent<'m> {
    runner: BaselineRunner<'m>,
    pub target: f64,
}

impl<'m> DtAgent<'m> {
    pub fn new(model: &'m BaselineModel, target: f64) -> Self {
        Self {
            runner: BaselineRunner::new(model),
            target,
        }
    }

    pub fn returns_to_go(&self) -> &[f64] {
        &self.runner.returns_to_go
    }
}

impl Agent for DtAgent<'_> {
    fn begin(&mut self, observation: &[f64]) -> Result<()> {
        self.runner.history = History::new(observation.to_vec());
        self.runner.returns_to_go = vec![self.target];
        Ok(())
    }

    fn act(&mut self) -> Result<Vec<f64>> {
        self.runner.predict()
    }

    fn record(&mut self, action: &[f64], reward: f64, next: &[f64]) {
        let cfg = &self.runner.model.config;
        let current = *self.runner.returns_to_go.last().expect("begin called");
        self.runner
            .returns_to_go
            .push(next_return_to_go(current, reward, cfg.gamma, cfg.discounted_returns));
        self.runner.history.push(action.to_vec(), next.to_vec());
    }
}
