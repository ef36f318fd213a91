use std::fmt::Write as _;

use crate::data::windows::WindowIndex;
use crate::data::{discounted_returns, sample_windows, Dataset, NormStats};
use crate::error::Result;
use crate::graph::Tape;
use crate::models::{BaselineConfig, BaselineModel, SpltConfig, SpltModel};
use crate::optim::{lr_schedule, AdamConfig, AdamState};
use crate::rng::{stream_rng, Stream};

use super::experiment::TrainConfig;

/// Loss curve rows with named columns.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl TrainLog {
    pub fn to_csv(&self, provenance: Option<&serde_json::Value>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# version: {}", crate::checkpoint::VERSION);
        if let Some(p) = provenance {
            let _ = writeln!(out, "# config: {p}");
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Mean of `column` over the first / last `n` rows.
    pub fn head_tail_mean(&self, column: &str, n: usize) -> Option<(f64, f64)> {
        let c = self.columns.iter().position(|x| *x == column)?;
        let n = n.min(self.rows.len()).max(1);
        let mean = |rows: &[Vec<f64>]| rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64;
        Some((mean(&self.rows[..n]), mean(&self.rows[self.rows.len() - n..])))
    }
}

fn adam(train: &TrainConfig) -> AdamConfig {
    AdamConfig {
        lr: train.lr,
        weight_decay: train.weight_decay,
        ..AdamConfig::default()
    }
}

fn should_log(step: usize, train: &TrainConfig) -> bool {
    step.is_multiple_of(train.log_every.max(1)) || step + 1 == train.steps
}

pub fn train_splt(dataset: &Dataset, config: SpltConfig, train: &TrainConfig, seed: u64) -> Result<(SpltModel, TrainLog)> {
    let mut model = SpltModel::new(config, dataset.stats.clone(), &mut stream_rng(seed, Stream::Init))?;
    let mut opt = AdamState::new(&model.store, adam(train));
    let mut sampling = stream_rng(seed, Stream::Sampling);
    let mut latent = stream_rng(seed, Stream::Latent);
    let index = WindowIndex::new(dataset);
    let k = model.config.context_k;
    let mut log = TrainLog {
        columns: vec![
            "step", "lr", "policy_loss", "policy_recon", "policy_kl", "world_loss", "world_recon", "world_kl",
        ],
        rows: Vec::new(),
    };
    for step in 0..train.steps {
        let batch = sample_windows(dataset, &index, k, train.batch_size, &mut sampling);
        let (grads, pv, wv) = {
            let mut tape = Tape::new(&model.store);
            let (lp, pv) = model.policy_loss(&mut tape, &batch, &mut latent)?;
            let (lw, wv) = model.world_loss(&mut tape, &batch, &mut latent)?;
            let total = tape.add(lp, lw)?;
            (tape.backward(total)?, pv, wv)
        };
        let lr = lr_schedule(step as u64 + 1, train.warmup_steps, train.lr);
        opt.step(&mut model.store, &grads, lr)?;
        if should_log(step, train) {
            log.rows.push(vec![step as f64, lr, pv.total, pv.recon, pv.kl, wv.total, wv.recon, wv.kl]);
        }
    }
    Ok((model, log))
}

/// The dataset with undiscounted returns-to-go and statistics to match.
pub fn with_undiscounted_returns(dataset: &Dataset) -> Dataset {
    let mut d = dataset.clone();
    for e in &mut d.episodes {
        e.returns = discounted_returns(&e.rewards, 1.0);
    }
    d.stats = NormStats::compute(&d.episodes);
    d
}

pub fn train_baseline(
    dataset: &Dataset,
    config: BaselineConfig,
    train: &TrainConfig,
    seed: u64,
) -> Result<(BaselineModel, TrainLog)> {
    let undiscounted;
    let dataset = if config.discounted_returns {
        dataset
    } else {
        undiscounted = with_undiscounted_returns(dataset);
        &undiscounted
    };
    let mut model = BaselineModel::new(config, dataset.stats.clone(), &mut stream_rng(seed, Stream::Init))?;
    let mut opt = AdamState::new(&model.store, adam(train));
    let mut sampling = stream_rng(seed, Stream::Sampling);
    let index = WindowIndex::new(dataset);
    let k = model.config.context_k;
    let mut log = TrainLog {
        columns: vec!["step", "lr", "loss"],
        rows: Vec::new(),
    };
    for step in 0..train.steps {
        let batch = sample_windows(dataset, &index, k, train.batch_size, &mut sampling);
        let (grads, loss) = {
            let mut tape = Tape::new(&model.store);
            let (l, v) = model.loss(&mut tape, &batch)?;
            (tape.backward(l)?, v)
        };
        let lr = lr_schedule(step as u64 + 1, train.warmup_steps, train.lr);
        opt.step(&mut model.store, &grads, lr)?;
        if should_log(step, train) {
            log.rows.push(vec![step as f64, lr, loss]);
        }
    }
    Ok((model, log))
}
