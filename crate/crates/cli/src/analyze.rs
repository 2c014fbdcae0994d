//! `slk eval`, `slk grad-report` and `slk bench`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use slk_core::checkpoint::load_checkpoint;
use slk_core::dataset::load_split;
use slk_core::diagnostics::{bench_epochs, grad_report, write_bench_csv};
use slk_core::quantile::{quantile_diagnostics, write_diagnostics_csv};
use slk_core::{evaluate, EvalTarget, LossConfig, LossVariant, TrainConfig};

use crate::output::{new_output_dir, write_json};

/// Parses labels such as `sl`, `sl@20`, `bpr`, `lambdaloss@20` or `lambdaloss@20-s`.
pub fn parse_loss_label(label: &str) -> Result<LossConfig> {
    let lower = label.trim().to_ascii_lowercase();
    let (body, sampled) = match lower.strip_suffix("-s") {
        Some(rest) => (rest, true),
        None => (lower.as_str(), false),
    };
    let (base, k) = match body.split_once('@') {
        Some((base, k)) => {
            let k: usize = k
                .parse()
                .with_context(|| format!("loss {label:?}: cutoff {k:?} is not a positive integer"))?;
            (base, Some(k))
        }
        None => (body, None),
    };
    let variant = match (base, k, sampled) {
        ("sl", None, false) => LossVariant::Sl,
        ("sl", Some(_), false) => LossVariant::SlAtK,
        ("bpr", None, false) => LossVariant::Bpr,
        ("lambdaloss", _, false) => LossVariant::LambdaLossAtK,
        ("lambdaloss", _, true) => LossVariant::LambdaLossAtKSampled,
        _ => bail!("unknown loss {label:?}; expected sl, sl@K, bpr, lambdaloss@K or lambdaloss@K-s"),
    };
    let mut config = LossConfig::new(variant);
    if let Some(k) = k {
        config.k = k;
    }
    config.validate()?;
    Ok(config)
}

/// Accepts repeated flags and comma-separated lists.
pub fn split_labels(raw: &[String]) -> Vec<String> {
    raw.iter()
        .flat_map(|s| s.split(','))
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    pub split: PathBuf,
    pub cutoffs: Vec<usize>,
    pub target: EvalTarget,
    pub out: PathBuf,
}

pub fn eval(opts: &EvalOptions) -> Result<serde_json::Value> {
    let trainer = load_checkpoint(&opts.checkpoint)?;
    let split = load_split(&opts.split).with_context(|| format!("loading split {}", opts.split.display()))?;
    let report = evaluate(&trainer.model, &split, &opts.cutoffs, opts.target)?;
    new_output_dir(&opts.out)?;
    report.write_csv(&opts.out.join("report.csv"))?;
    report.write_json(&opts.out.join("report.json"))?;
    report.write_per_user_csv(&opts.out.join("per_user.csv"))?;
    if let Some(state) = &trainer.quantiles {
        let rows = quantile_diagnostics(&trainer.model, state)?;
        write_diagnostics_csv(&opts.out.join("quantiles.csv"), &rows)?;
    }
    Ok(report.summary_json())
}

#[derive(Debug, Clone)]
pub struct GradOptions {
    pub checkpoint: PathBuf,
    pub split: PathBuf,
    pub losses: Vec<String>,
    pub samples: usize,
    pub negatives: usize,
    pub quantile_samples: usize,
    pub tau_d: f64,
    pub tau_w: f64,
    pub seed: u64,
    pub out: PathBuf,
}

pub fn grad(opts: &GradOptions) -> Result<serde_json::Value> {
    let trainer = load_checkpoint(&opts.checkpoint)?;
    let split = load_split(&opts.split).with_context(|| format!("loading split {}", opts.split.display()))?;
    let losses = labelled_losses(&opts.losses, |cfg| {
        cfg.tau_d = opts.tau_d;
        cfg.tau_w = opts.tau_w;
        cfg.num_negatives = opts.quantile_samples;
    })?;
    let report = grad_report(&trainer.model, &split.train, &losses, opts.samples, opts.negatives, opts.seed)?;
    new_output_dir(&opts.out)?;
    report.write_csv(&opts.out.join("grad_rows.csv"))?;
    report.write_summary_csv(&opts.out.join("grad_summary.csv"))?;
    let summary = serde_json::json!({
        "checkpoint": opts.checkpoint.display().to_string(),
        "samples": opts.samples,
        "negatives": opts.negatives,
        "seed": opts.seed,
        "losses": report.summary,
    });
    write_json(&opts.out.join("grad_summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub split: PathBuf,
    pub losses: Vec<String>,
    pub repetitions: usize,
    pub negatives: usize,
    pub dim: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub tau_d: f64,
    pub tau_w: f64,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
struct BenchSummary<'a> {
    split: String,
    users: usize,
    items: usize,
    train_interactions: usize,
    threads: usize,
    rows: &'a [slk_core::diagnostics::BenchRow],
}

pub fn bench(opts: &BenchOptions) -> Result<serde_json::Value> {
    let split = load_split(&opts.split).with_context(|| format!("loading split {}", opts.split.display()))?;
    let losses = labelled_losses(&opts.losses, |cfg| {
        cfg.tau_d = opts.tau_d;
        cfg.tau_w = opts.tau_w;
        cfg.num_negatives = opts.negatives;
    })?;
    let runs: Vec<(String, TrainConfig)> = losses
        .into_iter()
        .map(|(name, loss)| {
            let mut cfg = TrainConfig::new(loss);
            cfg.dim = opts.dim;
            cfg.batch_size = opts.batch_size;
            cfg.lr = opts.lr;
            cfg.seed = opts.seed;
            cfg.epochs = 1;
            (name, cfg)
        })
        .collect();
    let rows = bench_epochs(&split.train, &runs, opts.repetitions)?;
    new_output_dir(&opts.out)?;
    write_bench_csv(&opts.out.join("bench.csv"), &rows)?;
    let summary = BenchSummary {
        split: opts.split.display().to_string(),
        users: split.num_users(),
        items: split.num_items(),
        train_interactions: split.train.total_interactions(),
        threads: rayon::current_num_threads(),
        rows: &rows,
    };
    write_json(&opts.out.join("bench.json"), &summary)?;
    Ok(serde_json::to_value(summary)?)
}

fn labelled_losses(labels: &[String], tune: impl Fn(&mut LossConfig)) -> Result<Vec<(String, LossConfig)>> {
    let labels = split_labels(labels);
    if labels.is_empty() {
        bail!("at least one --loss is required");
    }
    labels
        .into_iter()
        .map(|label| {
            let mut cfg = parse_loss_label(&label)?;
            tune(&mut cfg);
            cfg.validate()?;
            Ok((label, cfg))
        })
        .collect()
}

pub fn parse_cutoffs(raw: &str) -> Result<Vec<usize>> {
    let cutoffs: Vec<usize> = raw
        .split(',')
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad cutoff {s:?}")))
        .collect::<Result<_>>()?;
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        bail!("cutoffs must be positive integers");
    }
    Ok(cutoffs)
}

pub fn ensure_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!("{} does not exist", path.display());
    }
    Ok(())
}
