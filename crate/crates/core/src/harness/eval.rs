use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::agents::Agent;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::rng::{derive, stream_seed, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    /// Undiscounted sum of rewards.
    pub total_return: f64,
    pub discounted_return: f64,
    pub crashed: bool,
    pub length: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub episodes: usize,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_discounted: f64,
    /// Percent of episodes that ended without a crash.
    pub success_rate: f64,
    pub crashes: usize,
    pub mean_length: f64,
    pub min_length: usize,
    pub max_length: usize,
}

impl SeedMetrics {
    pub fn from_outcomes(seed: u64, outcomes: &[EpisodeOutcome]) -> Self {
        let returns: Vec<f64> = outcomes.iter().map(|o| o.total_return).collect();
        let disc: Vec<f64> = outcomes.iter().map(|o| o.discounted_return).collect();
        let crashes = outcomes.iter().filter(|o| o.crashed).count();
        let lengths: Vec<usize> = outcomes.iter().map(|o| o.length).collect();
        let (mean_return, std_return) = mean_std(&returns);
        Self {
            seed,
            episodes: outcomes.len(),
            mean_return,
            std_return,
            mean_discounted: mean_std(&disc).0,
            success_rate: 100.0 * (outcomes.len() - crashes) as f64 / outcomes.len().max(1) as f64,
            crashes,
            mean_length: lengths.iter().sum::<usize>() as f64 / lengths.len().max(1) as f64,
            min_length: lengths.iter().copied().min().unwrap_or(0),
            max_length: lengths.iter().copied().max().unwrap_or(0),
        }
    }
}

/// Per-seed rows plus mean ± std across seeds (population std).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub per_seed: Vec<SeedMetrics>,
    pub return_mean: f64,
    pub return_std: f64,
    pub discounted_mean: f64,
    pub discounted_std: f64,
    pub success_mean: f64,
    pub success_std: f64,
    pub crashes: usize,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl MetricsReport {
    pub fn from_seeds(label: &str, per_seed: Vec<SeedMetrics>) -> Self {
        let col = |f: fn(&SeedMetrics) -> f64| mean_std(&per_seed.iter().map(f).collect::<Vec<_>>());
        let (return_mean, return_std) = col(|s| s.mean_return);
        let (discounted_mean, discounted_std) = col(|s| s.mean_discounted);
        let (success_mean, success_std) = col(|s| s.success_rate);
        let crashes = per_seed.iter().map(|s| s.crashes).sum();
        Self {
            label: label.to_string(),
            per_seed,
            return_mean,
            return_std,
            discounted_mean,
            discounted_std,
            success_mean,
            success_std,
            crashes,
        }
    }

    /// CSV with provenance comment lines, one row per seed and a summary row.
    pub fn to_csv(&self, provenance: Option<&serde_json::Value>) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# version: {}", crate::checkpoint::VERSION);
        if let Some(p) = provenance {
            let _ = writeln!(out, "# config: {p}");
        }
        out.push_str(
            "label,seed,episodes,mean_return,std_return,mean_discounted_return,success_rate,crashes,mean_length,min_length,max_length\n",
        );
        for s in &self.per_seed {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                self.label,
                s.seed,
                s.episodes,
                s.mean_return,
                s.std_return,
                s.mean_discounted,
                s.success_rate,
                s.crashes,
                s.mean_length,
                s.min_length,
                s.max_length
            );
        }
        let _ = writeln!(
            out,
            "{},all,{},{},{},{},{},{},,,",
            self.label,
            self.per_seed.iter().map(|s| s.episodes).sum::<usize>(),
            self.return_mean,
            self.return_std,
            self.discounted_mean,
            self.success_mean,
            self.crashes
        );
        out
    }
}

impl MetricsReport {
    /// Rebuilds a report from the per-seed rows of [`MetricsReport::to_csv`].
    pub fn from_csv(csv: &str) -> Result<Self> {
        let bad = |m: String| Error::InvalidArgument(format!("metrics csv: {m}"));
        let mut label = None;
        let mut per_seed = Vec::new();
        let rows = csv.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).skip(1);
        for line in rows {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 11 {
                return Err(bad(format!("expected 11 fields in '{line}'")));
            }
            if f[1] == "all" {
                continue;
            }
            label.get_or_insert_with(|| f[0].to_string());
            let int = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("{s}: {e}")));
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s}: {e}")));
            per_seed.push(SeedMetrics {
                seed: f[1].parse().map_err(|e| bad(format!("{}: {e}", f[1])))?,
                episodes: int(f[2])?,
                mean_return: num(f[3])?,
                std_return: num(f[4])?,
                mean_discounted: num(f[5])?,
                success_rate: num(f[6])?,
                crashes: int(f[7])?,
                mean_length: num(f[8])?,
                min_length: int(f[9])?,
                max_length: int(f[10])?,
            });
        }
        let label = label.ok_or_else(|| bad("no per-seed rows".into()))?;
        Ok(Self::from_seeds(&label, per_seed))
    }
}

/// Seed of episode `episode` under evaluation seed `seed`.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    derive(stream_seed(seed, Stream::Env), episode as u64)
}

/// Runs `episodes` closed-loop episodes of `agent` in a fresh environment.
pub fn run_episodes(env: &EnvConfig, agent: &mut dyn Agent, episodes: usize, seed: u64, gamma: f64) -> Result<Vec<EpisodeOutcome>> {
    let mut e = env.build();
    let mut out = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let obs = e.reset(episode_seed(seed, ep));
        agent.begin(&obs)?;
        let (mut total, mut disc, mut g, mut len) = (0.0, 0.0, 1.0, 0);
        loop {
            let action = agent.act()?;
            if action.len() != e.action_dim() {
                return Err(Error::InvalidArgument(format!(
                    "agent produced {} action values, environment expects {}",
                    action.len(),
                    e.action_dim()
                )));
            }
            let r = e.step(&action)?;
            total += r.reward;
            disc += g * r.reward;
            g *= gamma;
            len += 1;
            agent.record(&action, r.reward, &r.observation);
            if r.done {
                out.push(EpisodeOutcome {
                    total_return: total,
                    discounted_return: disc,
                    crashed: r.info.crash,
                    length: len,
                });
                break;
            }
        }
    }
    Ok(out)
}

/// Evaluates one agent per seed, `episodes` episodes each.
pub fn run_eval<'a>(
    label: &str,
    env: &EnvConfig,
    make_agent: &mut dyn FnMut() -> Result<Box<dyn Agent + 'a>>,
    seeds: &[u64],
    episodes: usize,
    gamma: f64,
) -> Result<MetricsReport> {
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut agent = make_agent()?;
        let outcomes = run_episodes(env, agent.as_mut(), episodes, seed, gamma)?;
        per_seed.push(SeedMetrics::from_outcomes(seed, &outcomes));
    }
    Ok(MetricsReport::from_seeds(label, per_seed))
}
