//! `splt`: collect offline data, train SPLT and baselines, evaluate them in
//! closed loop, and tabulate results.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use splt_core::checkpoint::{Checkpoint, Model, VERSION};
use splt_core::data::Dataset;
use splt_core::env::EnvKind;
use splt_core::harness::compare::run_compare;
use splt_core::harness::pipeline::{self, method_label};
use splt_core::harness::{ExperimentConfig, MetricsReport, ModelKind};
use splt_core::models::baseline::dt_target;
use splt_core::planner::PlannerMode;

#[derive(Parser)]
#[command(name = "splt", version, about = "Latent-planning experiments on toy driving and a five-state MDP")]
struct Cli {
    /// Root seed for collection, initialization, sampling and evaluation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for every output file.
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// JSON experiment configuration; explicit flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out the data-collection controllers and save a dataset.
    Collect(CollectArgs),
    /// Train one model on a dataset and save a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint in closed loop.
    Eval(EvalArgs),
    /// Evaluate several checkpoints (or read metrics files) into one table.
    Compare(CompareArgs),
    /// Train SPLT and DT on the five-state MDP and report action choices.
    MdpDemo(MdpArgs),
}

#[derive(Args)]
struct CollectArgs {
    /// Environment: toy or mdp.
    #[arg(long)]
    env: Option<EnvKind>,
    /// Number of environment transitions to collect.
    #[arg(long, default_value_t = 50_000)]
    steps: usize,
    /// Dataset path (default: OUT_DIR/dataset.spltds).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Default)]
struct ModelFlags {
    /// Model family: splt, bc or dt.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Codebook size per latent digit.
    #[arg(long)]
    c: Option<usize>,
    /// World latent digits.
    #[arg(long)]
    nw: Option<usize>,
    /// Policy latent digits.
    #[arg(long)]
    npi: Option<usize>,
    /// KL weight of both latent ELBOs.
    #[arg(long)]
    beta: Option<f64>,
    /// Context length K (windows hold K + 1 timesteps).
    #[arg(long)]
    context: Option<usize>,
    /// Transformer layers.
    #[arg(long)]
    layers: Option<usize>,
    /// Attention heads.
    #[arg(long)]
    heads: Option<usize>,
    /// Embedding width.
    #[arg(long)]
    embed: Option<usize>,
    /// Gradient steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Windows per batch.
    #[arg(long)]
    batch: Option<usize>,
    /// Peak Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Linear warmup steps.
    #[arg(long)]
    warmup: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset written by `collect`.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[command(flatten)]
    model: ModelFlags,
    /// Checkpoint path (default: OUT_DIR/<model>.ckpt).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone, Default)]
struct EvalFlags {
    /// Environment the checkpoint is evaluated on.
    #[arg(long)]
    env: Option<EnvKind>,
    /// Episodes per evaluation seed.
    #[arg(long)]
    episodes: Option<usize>,
    /// Evaluation seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    eval_seeds: Option<Vec<u64>>,
    /// maxmin or maxmax.
    #[arg(long)]
    planner: Option<PlannerMode>,
    /// Planning horizon h (h + 1 decoder calls per candidate).
    #[arg(long)]
    horizon: Option<usize>,
    /// Planning context K (at most the trained K).
    #[arg(long)]
    context: Option<usize>,
    /// DT conditioning return.
    #[arg(long)]
    target_return: Option<f64>,
    /// DT target as a fraction of the best return in the dataset.
    #[arg(long, conflicts_with = "target_return")]
    alpha: Option<f64>,
    /// Dataset for `--alpha` (default: the one the checkpoint was trained on).
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    eval: EvalFlags,
    /// Metrics path (default: OUT_DIR/metrics.csv).
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Write every planning step's value matrix as JSON lines.
    #[arg(long)]
    dump_candidates: bool,
    /// Path for `--dump-candidates` (default: OUT_DIR/candidates.jsonl).
    #[arg(long)]
    candidates_out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Checkpoints to evaluate; each becomes one row.
    #[arg(long, num_args = 1..)]
    checkpoint: Vec<PathBuf>,
    /// Also evaluate every SPLT checkpoint with the max-max planner.
    #[arg(long)]
    ablation: bool,
    /// Existing metrics files to include as rows.
    #[arg(long, num_args = 1..)]
    metrics: Vec<PathBuf>,
    #[command(flatten)]
    eval: EvalFlags,
}

#[derive(Args)]
struct MdpArgs {
    /// Uniform-random transitions to collect.
    #[arg(long, default_value_t = 10_000)]
    collect_steps: usize,
    /// Episodes over which first-step choices are counted.
    #[arg(long, default_value_t = 100)]
    decisions: usize,
    #[command(flatten)]
    model: ModelFlags,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    match &cli.command {
        Command::Collect(a) => collect(&cli, a),
        Command::Train(a) => train(&cli, a),
        Command::Eval(a) => eval(&cli, a),
        Command::Compare(a) => compare(&cli, a),
        Command::MdpDemo(a) => mdp_demo(&cli, a),
    }
}

/// Overlays `top` onto `base`, recursing into objects.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `base`, then the `--config` file, then `--seed`.
fn layered(cli: &Cli, base: ExperimentConfig) -> Result<ExperimentConfig> {
    let mut v = base.to_json();
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        merge(&mut v, file);
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(v).context("invalid experiment configuration")?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.version = VERSION.to_string();
    Ok(cfg)
}

fn apply_model_flags(cfg: &mut ExperimentConfig, f: &ModelFlags) {
    let set = |slot: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *slot = v;
        }
    };
    if let Some(m) = f.model {
        cfg.model = m;
    }
    set(&mut cfg.c, f.c);
    set(&mut cfg.n_w, f.nw);
    set(&mut cfg.n_pi, f.npi);
    set(&mut cfg.context_k, f.context);
    set(&mut cfg.net.n_layers, f.layers);
    set(&mut cfg.net.n_heads, f.heads);
    set(&mut cfg.net.embed_dim, f.embed);
    set(&mut cfg.train.steps, f.steps);
    set(&mut cfg.train.batch_size, f.batch);
    if let Some(b) = f.beta {
        cfg.beta = b;
    }
    if let Some(lr) = f.lr {
        cfg.train.lr = lr;
    }
    if let Some(w) = f.warmup {
        cfg.train.warmup_steps = w;
    }
}

fn apply_eval_flags(cfg: &mut ExperimentConfig, f: &EvalFlags) {
    if let Some(e) = f.env {
        cfg.env = e;
    }
    if let Some(n) = f.episodes {
        cfg.eval_episodes = n;
    }
    if let Some(s) = &f.eval_seeds {
        cfg.eval_seeds = s.clone();
    }
    if let Some(p) = f.planner {
        cfg.planner = p;
    }
    if let Some(h) = f.horizon {
        cfg.horizon = h;
    }
    if let Some(k) = f.context {
        cfg.context_k = k;
    }
    if let Some(t) = f.target_return {
        cfg.dt_target = Some(t);
    }
    if let Some(a) = f.alpha {
        cfg.dt_alpha = a;
        cfg.dt_target = None;
    }
    if let Some(d) = &f.dataset {
        cfg.dataset = Some(d.clone());
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn snapshot(cli: &Cli, name: &str, cfg: &ExperimentConfig) -> Result<()> {
    let text = serde_json::to_string_pretty(&cfg.to_json())?;
    write(&cli.out_dir.join(name), &text)
}

fn collect(cli: &Cli, a: &CollectArgs) -> Result<()> {
    let mut cfg = layered(cli, ExperimentConfig::default())?;
    if let Some(e) = a.env {
        cfg.env = e;
    }
    let out = a.out.clone().unwrap_or_else(|| cli.out_dir.join("dataset.spltds"));
    let d = pipeline::collect(&cfg, a.steps)?;
    d.save(&out).with_context(|| format!("saving {}", out.display()))?;
    let crashes = d.episodes.iter().filter(|e| e.done == splt_core::data::DoneReason::Crash).count();
    println!(
        "{} episodes, {} transitions, {} crashes, best return-to-go {:.2}",
        d.episodes.len(),
        d.total_transitions(),
        crashes,
        d.max_return()
    );
    for dim in d.stats.floored() {
        println!("note: {dim} has (near) zero variance; its std was floored");
    }
    println!("wrote {}", out.display());
    snapshot(cli, "collect_config.json", &cfg)
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let mut cfg = layered(cli, ExperimentConfig::default())?;
    apply_model_flags(&mut cfg, &a.model);
    if let Some(d) = &a.dataset {
        cfg.dataset = Some(d.clone());
    }
    let path = cfg.dataset.clone().context("no dataset: pass --dataset or set it in --config")?;
    let dataset = Dataset::load(&path).with_context(|| format!("loading {}", path.display()))?;
    cfg.env = dataset.env.kind();
    let (ck, log) = pipeline::train(&cfg, &dataset)?;
    let name = ck.model.kind_name();
    let out = a.out.clone().unwrap_or_else(|| cli.out_dir.join(format!("{name}.ckpt")));
    ck.save(&out).with_context(|| format!("saving {}", out.display()))?;
    println!("wrote {}", out.display());
    if let Some(last) = log.rows.last() {
        let cells: Vec<String> = log.columns.iter().zip(last).map(|(c, v)| format!("{c}={v:.5}")).collect();
        println!("final: {}", cells.join(" "));
    }
    write(&cli.out_dir.join(format!("{name}_losses.csv")), &log.to_csv(Some(&ck.experiment)))?;
    write(&cli.out_dir.join(format!("{name}_config.json")), &serde_json::to_string_pretty(&ck.experiment)?)
}

/// The checkpoint's own configuration, then the file, then flags; resolves
/// a DT target from `--alpha` when needed.
fn eval_config(cli: &Cli, ck: &Checkpoint, flags: &EvalFlags) -> Result<ExperimentConfig> {
    let base: ExperimentConfig =
        serde_json::from_value(ck.experiment.clone()).context("checkpoint carries an unreadable configuration")?;
    let mut cfg = layered(cli, base)?;
    apply_eval_flags(&mut cfg, flags);
    if let Model::Baseline(m) = &ck.model {
        if m.config.kind == splt_core::models::BaselineKind::Dt && cfg.dt_target.is_none() {
            let path = cfg.dataset.clone().context("--alpha needs a dataset (--dataset)")?;
            let d = Dataset::load(&path).with_context(|| format!("loading {}", path.display()))?;
            let d = if m.config.discounted_returns {
                d
            } else {
                splt_core::harness::train::with_undiscounted_returns(&d)
            };
            cfg.dt_target = Some(dt_target(&d, cfg.dt_alpha)?);
        }
    }
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn print_report(r: &MetricsReport) {
    println!(
        "{}: return {:.2} ± {:.2}, success {:.1}% ± {:.1}, crashes {}",
        r.label, r.return_mean, r.return_std, r.success_mean, r.success_std, r.crashes
    );
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let cfg = eval_config(cli, &ck, &a.eval)?;
    let dump = a
        .dump_candidates
        .then(|| a.candidates_out.clone().unwrap_or_else(|| cli.out_dir.join("candidates.jsonl")));
    if dump.is_some() && !matches!(ck.model, Model::Splt(_)) {
        bail!("--dump-candidates applies to SPLT checkpoints only");
    }
    let (report, traces) = pipeline::evaluate(&cfg, &ck, dump.is_some())?;
    print_report(&report);
    let out = a.metrics_out.clone().unwrap_or_else(|| cli.out_dir.join("metrics.csv"));
    write(&out, &report.to_csv(Some(&cfg.to_json())))?;
    if let Some(path) = dump {
        let mut f = std::io::BufWriter::new(
            fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        for (seed, steps) in &traces {
            for t in steps {
                let mut line = serde_json::to_value(t)?;
                line["seed"] = (*seed).into();
                writeln!(f, "{line}")?;
            }
        }
        f.flush()?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn compare(cli: &Cli, a: &CompareArgs) -> Result<()> {
    if a.checkpoint.is_empty() && a.metrics.is_empty() {
        bail!("nothing to compare: pass --checkpoint and/or --metrics");
    }
    let mut reports = Vec::new();
    let mut configs = Vec::new();
    for path in &a.checkpoint {
        let ck = load_checkpoint(path)?;
        let cfg = eval_config(cli, &ck, &a.eval)?;
        let mut runs = vec![cfg.clone()];
        if a.ablation && matches!(ck.model, Model::Splt(_)) {
            let planner = if cfg.planner == PlannerMode::MaxMin { PlannerMode::MaxMax } else { PlannerMode::MaxMin };
            runs.push(ExperimentConfig { planner, ..cfg });
        }
        for cfg in runs {
            println!("evaluating {} from {}", method_label(&ck.model, &cfg), path.display());
            let (r, _) = pipeline::evaluate(&cfg, &ck, false)?;
            print_report(&r);
            configs.push(serde_json::json!({ "checkpoint": path, "config": cfg.to_json() }));
            reports.push(r);
        }
    }
    for path in &a.metrics {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        reports.push(MetricsReport::from_csv(&text).with_context(|| format!("parsing {}", path.display()))?);
        configs.push(serde_json::json!({ "metrics": path }));
    }
    let (_, csv, text) = run_compare(&reports);
    let provenance = format!("# version: {VERSION}\n# config: {}\n", Value::Array(configs));
    write(&cli.out_dir.join("compare.csv"), &(provenance + &csv))?;
    write(&cli.out_dir.join("compare.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn mdp_demo(cli: &Cli, a: &MdpArgs) -> Result<()> {
    let mut cfg = layered(cli, ExperimentConfig::mdp())?;
    apply_model_flags(&mut cfg, &a.model);
    cfg.env = EnvKind::Mdp;
    let run = pipeline::mdp_experiment(&cfg, a.collect_steps, a.decisions)?;
    let r = &run.report;
    println!("first-step choices over {} episodes:", r.decisions);
    println!("  SPLT max-min  picks a2: {:5.1}%", 100.0 * r.splt_maxmin_a2);
    println!("  SPLT max-max  picks a1: {:5.1}%", 100.0 * r.splt_maxmax_a1);
    println!("  DT target 10  picks a1: {:5.1}%", 100.0 * r.dt_target10_a1);
    println!("  DT target 5   picks a2: {:5.1}%", 100.0 * r.dt_target5_a2);
    println!("world decoder at s0:");
    for p in &r.world_predictions {
        println!(
            "  a{} code {:?} -> {} (reward {:.2})",
            p.action + 1,
            p.world_code,
            p.nearest_state,
            p.reward
        );
    }
    run.splt.save(&cli.out_dir.join("mdp_splt.ckpt"))?;
    run.dt.save(&cli.out_dir.join("mdp_dt.ckpt"))?;
    write(&cli.out_dir.join("mdp_splt_losses.csv"), &run.splt_losses.to_csv(Some(&run.splt.experiment)))?;
    write(&cli.out_dir.join("mdp_dt_losses.csv"), &run.dt_losses.to_csv(Some(&run.dt.experiment)))?;
    let report = serde_json::json!({ "version": VERSION, "config": cfg.to_json(), "report": r });
    write(&cli.out_dir.join("mdp_report.json"), &serde_json::to_string_pretty(&report)?)?;
    snapshot(cli, "mdp_config.json", &cfg)
}
