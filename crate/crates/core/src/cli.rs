//! Command-line front end: `train`, `sample`, `evaluate` and `oracle-check`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::drift_model::{Checkpoint, ControlField};
use crate::evaluate::{self, compute_metrics, Metric, MetricsReport};
use crate::io::{read_samples, write_samples};
use crate::oracle::checks::{run_all, Fault};
use crate::targets::{BuiltTarget, TargetSpec};
use crate::trainer::{simulate_forward, train_likelihood_heads, CheckpointPolicy, TrainConfig, Trainer};

/// Histogram resolution of the energy and distance CSVs.
pub const HISTOGRAM_BINS: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "bms", version, about = "Bridge matching samplers for unnormalized densities")]
pub struct Cli {
    /// Worker threads used for path simulation.
    #[arg(long, global = true, env = "BMS_WORKERS")]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a control and write a self-contained run directory.
    Train(TrainArgs),
    /// Draw terminal samples from a trained checkpoint.
    Sample(SampleArgs),
    /// Compute sample-quality metrics and histograms.
    Evaluate(EvaluateArgs),
    /// Run the closed-form identity checks and print a pass/fail table.
    OracleCheck(OracleArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parent of the run directory; defaults to `output_dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Divide outer steps, inner steps and buffer size by ten.
    #[arg(long)]
    pub desk_scale: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output path; the extension is chosen from the row count.
    #[arg(long)]
    pub out: PathBuf,
    /// Euler–Maruyama steps; defaults to the training value.
    #[arg(long)]
    pub steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint to draw model samples from.
    #[arg(long, conflicts_with = "samples", required_unless_present = "samples")]
    pub checkpoint: Option<PathBuf>,
    /// Stored model samples.
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Stored reference samples; exact target samples are drawn when absent.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Experiment config naming the target; defaults to the checkpoint's.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated metric names.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<Metric>>,
    /// Samples drawn from a checkpoint.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Scale every κ table by this factor.
    #[arg(long, hide = true)]
    pub inject_kappa_fault: Option<f64>,
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Sample(a) => cmd_sample(&a).map(|_| 0),
        Command::Evaluate(a) => cmd_evaluate(&a).map(|_| 0),
        Command::OracleCheck(a) => Ok(cmd_oracle_check(&a)),
    }
}

/// Creates `<parent>/<name>-<unix millis>`, adding a suffix on collision.
fn create_run_dir(parent: &Path, name: &str) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
    for k in 0.. {
        let dir = if k == 0 { parent.join(format!("{name}-{stamp}")) } else { parent.join(format!("{name}-{stamp}-{k}")) };
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", dir.display())),
        }
    }
    unreachable!()
}

pub fn cmd_train(a: &TrainArgs) -> anyhow::Result<i32> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if a.desk_scale {
        cfg.desk_scale();
    }
    cfg.train.validate()?;
    let parent = a.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let dir = create_run_dir(&parent, &cfg.name)?;
    println!("{}", dir.display());
    cfg.save(&dir.join("config.toml"))?;
    let target = cfg.train.target.build()?;
    if let Some(g) = target.as_gmm() {
        write_samples(&dir.join("target_means"), g.means.view())?;
    }

    let policy = CheckpointPolicy { dir: dir.join("checkpoints"), every: cfg.checkpoint_every };
    let mut trainer = Trainer::new(cfg.train.clone())?;
    let outcome = trainer.run(Some(&policy));
    trainer.log().write_csv(&dir.join("run_log.csv"))?;
    let mut summary = trainer.log().summary();
    summary["seed"] = cfg.train.seed.into();
    if let Err(e) = outcome {
        summary["status"] = "failed".into();
        summary["error"] = e.to_string().into();
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        eprintln!("training failed: {e}");
        return Ok(1);
    }
    summary["status"] = "completed".into();

    if cfg.train.likelihood.is_some() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        rng.set_stream(1);
        let fit = train_likelihood_heads(&cfg.train, trainer.field(), trainer.buffer(), &mut rng)?;
        Checkpoint::from_field(&fit.heads, trainer.schedule(), cfg.train.seed).save(&dir.join("likelihood.ckpt"))?;
        let mut csv = String::from("step,loss,nelson_rms\n");
        for r in &fit.log {
            csv.push_str(&format!("{},{:e},{:e}\n", r.step, r.loss, r.nelson_rms));
        }
        fs::write(dir.join("likelihood_log.csv"), csv)?;
        summary["final_nelson_rms"] = fit.log.last().map(|r| r.nelson_rms).into();
    }

    if cfg.eval_samples > 0 && cfg.train.outer_steps > 0 {
        let samples = sample_checkpoint(&Checkpoint::load(&policy.latest())?, cfg.eval_samples, cfg.train.seed, None)?;
        write_samples(&dir.join("samples"), samples.view())?;
        let metrics = available_metrics(&target, &cfg.metrics);
        if !metrics.is_empty() {
            let report = compute_metrics(&target, samples.view(), None, &metrics, cfg.train.seed)?;
            write_report(&dir, &report)?;
            summary["metrics"] = serde_json::to_value(&report)?;
        }
    }
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(0)
}

/// Metrics from `wanted` that need no stored reference for `target`.
fn available_metrics(target: &BuiltTarget, wanted: &[Metric]) -> Vec<Metric> {
    let exact = target.as_target().sample(1, &mut ChaCha8Rng::seed_from_u64(0)).is_some();
    wanted
        .iter()
        .copied()
        .filter(|m| match m {
            Metric::ModeTvd => target.as_gmm().is_some(),
            _ => exact,
        })
        .collect()
}

fn training_config(ck: &Checkpoint) -> anyhow::Result<TrainConfig> {
    let value = ck.header.config.clone().context("checkpoint carries no training configuration")?;
    Ok(serde_json::from_value(value)?)
}

/// Simulates `n` terminal samples from the control stored in `ck`.
pub fn sample_checkpoint(ck: &Checkpoint, n: usize, seed: u64, steps: Option<usize>) -> anyhow::Result<Array2<f64>> {
    let cfg = training_config(ck)?;
    let field = ck.field()?;
    if field.heads() != 1 {
        bail!("checkpoint holds {} heads; sampling needs a single-head control", field.heads());
    }
    if field.dim() != cfg.prior.dim() {
        bail!("checkpoint field has dimension {}, prior has {}", field.dim(), cfg.prior.dim());
    }
    if n == 0 {
        return Ok(Array2::zeros((0, field.dim())));
    }
    let schedule = ck.schedule()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = steps.unwrap_or(cfg.em_steps);
    let traj = simulate_forward(&field, &cfg.prior, &schedule, cfg.t_cut, steps, n, &mut rng, false)?;
    Ok(traj.x_end().to_owned())
}

pub fn cmd_sample(a: &SampleArgs) -> anyhow::Result<PathBuf> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let samples = sample_checkpoint(&ck, a.n, a.seed, a.steps)?;
    let path = write_samples(&a.out.with_extension(""), samples.view())?;
    println!("{}", path.display());
    Ok(path)
}

fn write_report(dir: &Path, report: &MetricsReport) -> anyhow::Result<()> {
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(report)?)?;
    fs::write(dir.join("metrics.csv"), report.to_csv())?;
    Ok(())
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> anyhow::Result<MetricsReport> {
    let ck = a.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let exp = a.config.as_deref().map(ExperimentConfig::load).transpose()?;
    let spec: TargetSpec = match (&exp, &ck) {
        (Some(e), _) => e.train.target.clone(),
        (None, Some(ck)) => training_config(ck)?.target,
        (None, None) => bail!("missing input: evaluating a sample file needs --config naming the target"),
    };
    let target = spec.build()?;
    let model = match (&ck, &a.samples) {
        (Some(ck), _) => sample_checkpoint(ck, a.n, a.seed, None)?,
        (None, Some(p)) => read_samples(p)?,
        (None, None) => bail!("missing input: pass --checkpoint or --samples"),
    };
    if model.ncols() != spec.dim() {
        bail!("model samples have dimension {}, target has {}", model.ncols(), spec.dim());
    }
    let reference = a.reference.as_deref().map(read_samples).transpose()?;
    let metrics = match (&a.metrics, &exp) {
        (Some(m), _) => m.clone(),
        (None, Some(e)) => e.metrics.clone(),
        (None, None) => available_metrics(&target, &Metric::all()),
    };
    let report = compute_metrics(&target, model.view(), reference.as_ref().map(|r| r.view()), &metrics, a.seed)?;
    fs::create_dir_all(&a.out)?;
    write_report(&a.out, &report)?;

    let t = target.as_target();
    let ref_energy = reference.as_ref().map(|r| evaluate::energies(t, r.view()));
    let energy = evaluate::histogram_csv(&evaluate::energies(t, model.view()), ref_energy.as_deref(), HISTOGRAM_BINS);
    fs::write(a.out.join("energy_hist.csv"), energy)?;
    if let Some(k) = evaluate::spatial_dim(&target) {
        let ref_dist = reference.as_ref().map(|r| evaluate::pair_distances(r.view(), k));
        let dist = evaluate::histogram_csv(&evaluate::pair_distances(model.view(), k), ref_dist.as_deref(), HISTOGRAM_BINS);
        fs::write(a.out.join("distance_hist.csv"), dist)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(report)
}

/// Prints the identity table and returns 0 when every check passes.
pub fn cmd_oracle_check(a: &OracleArgs) -> i32 {
    let results = run_all(Fault { kappa_scale: a.inject_kappa_fault });
    let name_w = results.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
    let tol_w = results.iter().map(|r| r.tolerance.len()).max().unwrap_or(9).max(9);
    println!("{:<name_w$}  {:<tol_w$}  {:<6}  observed", "check", "tolerance", "result");
    for r in &results {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!("{:<name_w$}  {:<tol_w$}  {:<6}  {}", r.name, r.tolerance, verdict, r.observed);
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {} failed", results.len(), failed);
    i32::from(failed > 0)
}
