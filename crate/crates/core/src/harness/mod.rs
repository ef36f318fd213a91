//! Experiment plumbing: training loops, closed-loop evaluation, comparison
//! tables, and the MDP optimism-bias demonstration.

pub mod agents;
pub mod compare;
pub mod eval;
pub mod experiment;
pub mod mdp_demo;
pub mod pipeline;
pub mod train;

pub use agents::{Agent, BcAgent, DtAgent, IdmAgent, PlanTrace, SpltAgent};
pub use compare::{parse_compare_csv, render_table, run_compare, CompareRow};
pub use eval::{run_eval, run_episodes, EpisodeOutcome, MetricsReport, SeedMetrics};
pub use experiment::{ExperimentConfig, ModelKind, TrainConfig};
pub use mdp_demo::{run_mdp_demo, MdpReport};
pub use train::{train_baseline, train_splt, TrainLog};
pub use pipeline::{collect, evaluate, mdp_experiment, run_pipeline, train, MdpExperiment, PipelineRun};
