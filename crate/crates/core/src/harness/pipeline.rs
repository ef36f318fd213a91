//! Collect, train and evaluate from one [`ExperimentConfig`].

use super::agents::{Agent, BcAgent, DtAgent, PlanTrace, SpltAgent};
use super::eval::{run_episodes, MetricsReport, SeedMetrics};
use super::experiment::{ExperimentConfig, ModelKind};
use super::mdp_demo::{run_mdp_demo, MdpReport};
use super::train::{train_baseline, train_splt, with_undiscounted_returns, TrainLog};
use crate::checkpoint::{Checkpoint, Model};
use crate::data::{collect_mdp_dataset, collect_toy_dataset, Dataset, IdmDistribution};
use crate::env::{EnvConfig, EnvKind};
use crate::error::{Error, Result};
use crate::models::baseline::dt_target;
use crate::models::BaselineKind;
use crate::planner::{PlannerMode, DEFAULT_LATENT_CAP};
use crate::rng::{stream_seed, Stream};

/// Collects `steps` transitions for the configured environment: the IDM
/// population on the toy task, uniform actions on the MDP.
pub fn collect(cfg: &ExperimentConfig, steps: usize) -> Result<Dataset> {
    let seed = stream_seed(cfg.seed, Stream::Data);
    let mut d = match cfg.env_config() {
        EnvConfig::Toy(toy) => collect_toy_dataset(steps, &IdmDistribution::default(), &toy, cfg.gamma, seed)?,
        EnvConfig::Mdp => collect_mdp_dataset(steps, cfg.gamma, seed)?,
    };
    d.meta = serde_json::json!({ "config": cfg.to_json(), "steps": steps });
    Ok(d)
}

/// Trains the configured model kind. For DT the conditioning target is
/// resolved from the dataset (`dt_alpha · best return`) unless set.
pub fn train(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<(Checkpoint, TrainLog)> {
    if dataset.env.kind() != cfg.env {
        return Err(Error::InvalidArgument(format!(
            "dataset was collected on {:?}, config asks for {:?}",
            dataset.env.kind(),
            cfg.env
        )));
    }
    let (sd, ad) = (dataset.state_dim(), dataset.action_dim());
    let mut resolved = cfg.clone();
    let (model, log) = match cfg.model {
        ModelKind::Splt => {
            let (m, log) = train_splt(dataset, cfg.splt_config(sd, ad), &cfg.train, cfg.seed)?;
            (Model::Splt(m), log)
        }
        ModelKind::Bc | ModelKind::Dt => {
            let kind = if cfg.model == ModelKind::Bc { BaselineKind::Bc } else { BaselineKind::Dt };
            if kind == BaselineKind::Dt && resolved.dt_target.is_none() {
                let target = if cfg.discounted_dt_returns {
                    dt_target(dataset, cfg.dt_alpha)?
                } else {
                    dt_target(&with_undiscounted_returns(dataset), cfg.dt_alpha)?
                };
                resolved.dt_target = Some(target);
            }
            let (m, log) = train_baseline(dataset, cfg.baseline_config(kind, sd, ad), &cfg.train, cfg.seed)?;
            (Model::Baseline(m), log)
        }
    };
    let checkpoint = Checkpoint {
        model,
        env: dataset.env.clone(),
        experiment: resolved.to_json(),
    };
    Ok((checkpoint, log))
}

/// Display label of a model under `cfg`, in the comparison-table style.
pub fn method_label(model: &Model, cfg: &ExperimentConfig) -> String {
    match model {
        Model::Splt(_) => match cfg.planner {
            PlannerMode::MaxMin => "SPLT (maxmin)".into(),
            PlannerMode::MaxMax => "SPLT (maxmax)".into(),
        },
        Model::Baseline(m) => match m.config.kind {
            BaselineKind::Bc => "BC".into(),
            BaselineKind::Dt => format!("DT (target {:.1})", cfg.dt_target.unwrap_or(0.0)),
        },
    }
}

/// Per-seed planning traces, present when requested for SPLT models.
pub type Traces = Vec<(u64, Vec<PlanTrace>)>;

/// Closed-loop evaluation over `cfg.eval_seeds × cfg.eval_episodes`.
/// Planner settings come from `cfg`; a DT target must be resolved.
pub fn evaluate(cfg: &ExperimentConfig, checkpoint: &Checkpoint, trace: bool) -> Result<(MetricsReport, Traces)> {
    let model = &checkpoint.model;
    let env = checkpoint.env.clone();
    if cfg.env != env.kind()
        || env.state_dim() != model.state_dim()
        || env.action_dim() != model.action_dim()
    {
        return Err(Error::InvalidArgument(format!(
            "checkpoint was trained on {:?} ({}-d states, {}-d actions), evaluation asks for {:?}",
            env.kind(),
            model.state_dim(),
            model.action_dim(),
            cfg.env
        )));
    }
    let label = method_label(model, cfg);
    let mut per_seed = Vec::with_capacity(cfg.eval_seeds.len());
    let mut traces = Vec::new();
    for &seed in &cfg.eval_seeds {
        let outcomes = match model {
            Model::Splt(m) => {
                let mut m = m.clone();
                if cfg.context_k > m.config.context_k {
                    return Err(Error::InvalidArgument(format!(
                        "context {} exceeds the trained context {}",
                        cfg.context_k, m.config.context_k
                    )));
                }
                m.config.context_k = cfg.context_k;
                let mut agent = SpltAgent::new(&m, cfg.horizon, cfg.planner, DEFAULT_LATENT_CAP)?;
                if trace {
                    agent.trace = Some(Vec::new());
                }
                let out = run_episodes(&env, &mut agent, cfg.eval_episodes, seed, cfg.gamma)?;
                if let Some(t) = agent.trace.take() {
                    traces.push((seed, t));
                }
                out
            }
            Model::Baseline(m) => {
                let mut agent: Box<dyn Agent> = match m.config.kind {
                    BaselineKind::Bc => Box::new(BcAgent::new(m)),
                    BaselineKind::Dt => {
                        let target = cfg.dt_target.ok_or_else(|| {
                            Error::InvalidArgument("DT evaluation needs a target return".into())
                        })?;
                        Box::new(DtAgent::new(m, target))
                    }
                };
                run_episodes(&env, agent.as_mut(), cfg.eval_episodes, seed, cfg.gamma)?
            }
        };
        per_seed.push(SeedMetrics::from_outcomes(seed, &outcomes));
    }
    Ok((MetricsReport::from_seeds(&label, per_seed), traces))
}

/// Everything one collect, train and evaluate pass produces.
#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub dataset: Dataset,
    pub checkpoint: Checkpoint,
    pub losses: TrainLog,
    pub metrics: MetricsReport,
}

/// Collect, train and evaluate under one root seed.
pub fn run_pipeline(cfg: &ExperimentConfig, collect_steps: usize) -> Result<PipelineRun> {
    let dataset = collect(cfg, collect_steps)?;
    let (checkpoint, losses) = train(cfg, &dataset)?;
    let resolved: ExperimentConfig = serde_json::from_value(checkpoint.experiment.clone())?;
    let (metrics, _) = evaluate(&resolved, &checkpoint, false)?;
    Ok(PipelineRun {
        dataset,
        checkpoint,
        losses,
        metrics,
    })
}

/// Outputs of the MDP optimism-bias experiment.
#[derive(Clone, Debug)]
pub struct MdpExperiment {
    pub dataset: Dataset,
    pub splt: Checkpoint,
    pub dt: Checkpoint,
    pub splt_losses: TrainLog,
    pub dt_losses: TrainLog,
    pub report: MdpReport,
}

/// Collects uniform-action MDP data, trains SPLT and DT on it under `cfg`,
/// and measures first-step action preferences over `decisions` episodes.
pub fn mdp_experiment(cfg: &ExperimentConfig, collect_steps: usize, decisions: usize) -> Result<MdpExperiment> {
    if cfg.env != EnvKind::Mdp {
        return Err(Error::InvalidArgument("the MDP experiment needs env = mdp".into()));
    }
    let dataset = collect(cfg, collect_steps)?;
    let splt_cfg = ExperimentConfig {
        model: ModelKind::Splt,
        ..cfg.clone()
    };
    let dt_cfg = ExperimentConfig {
        model: ModelKind::Dt,
        ..cfg.clone()
    };
    let (splt, splt_losses) = train(&splt_cfg, &dataset)?;
    let (dt, dt_losses) = train(&dt_cfg, &dataset)?;
    let report = match (&splt.model, &dt.model) {
        (Model::Splt(s), Model::Baseline(d)) => run_mdp_demo(s, d, decisions, cfg.seed)?,
        _ => unreachable!("trained kinds are fixed above"),
    };
    Ok(MdpExperiment {
        dataset,
        splt,
        dt,
        splt_losses,
        dt_losses,
        report,
    })
}

impl ExperimentConfig {
    /// Small configuration for the five-state MDP: one latent digit per
    /// model, a one-step context and a planning horizon of zero.
    pub fn mdp() -> Self {
        let mut cfg = Self {
            env: EnvKind::Mdp,
            c: 2,
            n_w: 1,
            n_pi: 1,
            context_k: 1,
            horizon: 0,
            dt_target: Some(10.0),
            eval_seeds: vec![0],
            ..Self::default()
        };
        cfg.net.n_layers = 2;
        cfg.net.n_heads = 4;
        cfg.net.embed_dim = 64;
        cfg.train.steps = 300;
        cfg.train.batch_size = 32;
        cfg.train.lr = 1e-3;
        cfg.train.warmup_steps = 50;
        cfg.train.log_every = 25;
        cfg
    }

    /// Reduced-scale toy benchmark that trains in minutes on one core.
    pub fn toy_small() -> Self {
        let mut cfg = Self::default();
        cfg.net.n_layers = 2;
        cfg.net.n_heads = 4;
        cfg.net.embed_dim = 32;
        cfg.train.steps = 4000;
        cfg.train.batch_size = 64;
        cfg.train.lr = 1e-3;
        cfg.train.warmup_steps = 100;
        cfg.train.log_every = 50;
        cfg
    }
}
