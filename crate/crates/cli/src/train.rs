//! `slk train`: one run per spec, or one per grid point.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use slk_core::checkpoint::save_checkpoint;
use slk_core::dataset::load_split;
use slk_core::metrics::CutoffSummary;
use slk_core::{evaluate, DatasetSplit, Trainer};

use crate::output::{fresh_run_dir, new_child_dir, unix_now, write_json, write_text};
use crate::prepare::{prepare_split, write_prepared, DatasetManifest, PrepareOptions};
use crate::spec::{ExperimentSpec, GridPoint, SpecFile};

pub const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Debug, Clone, Serialize)]
pub struct NoiseSummary {
    pub ratio: f64,
    pub seed: u64,
    pub added: usize,
    pub users_short: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub name: String,
    pub version: &'static str,
    pub started_unix: u64,
    pub seconds: f64,
    pub mean_epoch_seconds: f64,
    pub threads: usize,
    pub dataset_source: String,
    pub users: usize,
    pub items: usize,
    pub train_interactions: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSummary>,
    pub epochs: usize,
    pub final_loss: f64,
    pub eval: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: Vec<CutoffSummary>,
    pub seconds: f64,
}

fn load_dataset(spec: &ExperimentSpec, run_dir: &Path) -> Result<(DatasetSplit, String)> {
    let ds = &spec.dataset;
    if let Some(dir) = &ds.split {
        let split = load_split(dir).with_context(|| format!("loading split {}", dir.display()))?;
        return Ok((split, dir.display().to_string()));
    }
    let raw = ds.raw.clone().expect("validated: split or raw is set");
    let opts = PrepareOptions {
        input: raw.clone(),
        format: ds.raw_format()?,
        kcore: ds.kcore,
        min_rating: ds.min_rating,
        train_frac: ds.train_frac,
        val_frac: ds.val_frac,
        seed: ds.split_seed,
    };
    let (split, manifest): (DatasetSplit, DatasetManifest) = prepare_split(&opts)?;
    write_prepared(&new_child_dir(run_dir, "split")?, &split, &manifest)?;
    Ok((split, raw.display().to_string()))
}

/// Trains one spec into `dir`, which must already exist and be empty.
pub fn execute(spec: &ExperimentSpec, dir: &Path, quiet: bool) -> Result<RunOutcome> {
    let started_unix = unix_now();
    let clock = Instant::now();
    let resolved = spec.resolved();
    write_text(&dir.join("spec.resolved.toml"), &resolved.to_toml()?)?;

    let (mut split, source) = load_dataset(spec, dir)?;
    let noise = if spec.dataset.noise > 0.0 {
        let (noisy, report) = split.with_train_noise(spec.dataset.noise, spec.dataset.noise_seed)?;
        split = noisy;
        Some(NoiseSummary {
            ratio: spec.dataset.noise,
            seed: spec.dataset.noise_seed,
            added: report.added,
            users_short: report.shortfalls.len(),
        })
    } else {
        None
    };

    let config = spec.train_config();
    let epochs = config.epochs;
    let mut trainer = Trainer::new(&split.train, config)?;
    let every = (epochs / 20).max(1);
    while trainer.epoch < epochs {
        trainer.fit_until(&split, trainer.epoch + 1)?;
        if !quiet && (trainer.epoch % every == 0 || trainer.epoch == epochs) {
            let rec = trainer.history.epochs.last().expect("an epoch just ran");
            let mut line = format!(
                "[{}] epoch {}/{} loss {:.6} ({:.2}s)",
                resolved.run_name(),
                rec.epoch,
                epochs,
                rec.mean_loss,
                rec.seconds
            );
            if let Some(point) = trainer.history.evals.last().filter(|p| p.epoch == rec.epoch) {
                for s in &point.report.summary {
                    line.push_str(&format!(" val ndcg@{} {:.4}", s.k, s.ndcg));
                }
            }
            eprintln!("{line}");
        }
    }

    save_checkpoint(&trainer, &dir.join(CHECKPOINT_FILE))?;
    trainer.history.write_csv(&dir.join("history.csv"))?;
    trainer.history.write_eval_csv(&dir.join("evals.csv"))?;

    let report = evaluate(&trainer.model, &split, &spec.eval.cutoffs, spec.eval.target)?;
    report.write_csv(&dir.join("report.csv"))?;
    report.write_json(&dir.join("report.json"))?;
    report.write_per_user_csv(&dir.join("per_user.csv"))?;

    let epoch_seconds: Vec<f64> = trainer.history.epochs.iter().map(|e| e.seconds).collect();
    let seconds = clock.elapsed().as_secs_f64();
    let manifest = RunManifest {
        name: resolved.run_name(),
        version: env!("CARGO_PKG_VERSION"),
        started_unix,
        seconds,
        mean_epoch_seconds: epoch_seconds.iter().sum::<f64>() / epoch_seconds.len() as f64,
        threads: rayon::current_num_threads(),
        dataset_source: source,
        users: split.num_users(),
        items: split.num_items(),
        train_interactions: split.train.total_interactions(),
        noise,
        epochs: trainer.epoch,
        final_loss: trainer.history.losses().last().copied().unwrap_or(f64::NAN),
        eval: report.summary_json(),
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(RunOutcome {
        summary: report.summary.clone(),
        seconds,
    })
}

#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub out: Option<PathBuf>,
    pub name: Option<String>,
    pub seed: Option<u64>,
    /// `section.key=value` pairs.
    pub sets: Vec<String>,
}

/// Loads a spec, applies overrides and runs every grid point. Returns the
/// directory holding the results.
pub fn run(spec_path: &Path, overrides: &TrainOverrides, quiet: bool) -> Result<PathBuf> {
    let mut file = SpecFile::load(spec_path)?;
    file.apply_env(std::env::vars())?;
    for assignment in &overrides.sets {
        let (key, raw) = assignment
            .split_once('=')
            .with_context(|| format!("--set {assignment:?} must look like section.key=value"))?;
        file.set(key.trim(), crate::spec::parse_value(raw.trim()))?;
    }
    if let Some(seed) = overrides.seed {
        file.set("train.seed", toml::Value::Integer(seed as i64))?;
    }
    if let Some(out) = &overrides.out {
        file.set("output.dir", toml::Value::String(out.display().to_string()))?;
    }
    if let Some(name) = &overrides.name {
        file.set("output.name", toml::Value::String(name.clone()))?;
    }
    let points = file.expand()?;
    let first = &points[0].spec;
    // Relative output paths are taken from the working directory.
    let parent = first.output.dir.clone();
    let name = first.run_name();

    if !file.is_grid() {
        let dir = fresh_run_dir(&parent, &name)?;
        execute(first, &dir, quiet)?;
        return Ok(dir);
    }

    let root = fresh_run_dir(&parent, &format!("{name}-grid"))?;
    let mut rows = Vec::with_capacity(points.len());
    for (index, point) in points.iter().enumerate() {
        let label = point.label(index);
        if !quiet {
            eprintln!("grid point {}/{}: {label}", index + 1, points.len());
        }
        let dir = new_child_dir(&root, &label)?;
        let outcome = execute(&point.spec, &dir, quiet)?;
        rows.push(index_row(&label, point, &outcome));
        write_index(&root, &rows)?;
    }
    Ok(root)
}

fn index_row(label: &str, point: &GridPoint, outcome: &RunOutcome) -> BTreeMap<String, String> {
    let mut row = BTreeMap::new();
    row.insert("run".to_string(), label.to_string());
    for (key, value) in &point.assignments {
        row.insert(key.clone(), value.to_string());
    }
    for s in &outcome.summary {
        row.insert(format!("ndcg@{}", s.k), s.ndcg.to_string());
        row.insert(format!("recall@{}", s.k), s.recall.to_string());
    }
    row.insert("seconds".to_string(), format!("{:.3}", outcome.seconds));
    row
}

/// Rewritten after every grid point so a partial grid still has an index.
fn write_index(root: &Path, rows: &[BTreeMap<String, String>]) -> Result<()> {
    let mut columns: Vec<String> = vec!["run".to_string()];
    for row in rows {
        for key in row.keys() {
            if !columns.contains(key) {
                columns.push(key.clone());
            }
        }
    }
    let path = root.join("index.csv");
    let mut out = csv::Writer::from_path(&path)?;
    out.write_record(&columns)?;
    for row in rows {
        out.write_record(columns.iter().map(|c| row.get(c).map(String::as_str).unwrap_or("")))?;
    }
    out.flush()?;
    write_json(&root.join("index.json"), rows)?;
    Ok(())
}
