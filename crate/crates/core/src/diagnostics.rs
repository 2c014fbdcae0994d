//! Gradient-concentration reports and epoch timing.

use std::path::Path;
use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionSet;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::EmbeddingModel;
use crate::quantile::QuantileState;
use crate::rng::{derive_rng, tag};
use crate::trainer::{interaction_gradient_norms, sample_negatives, TrainConfig, Trainer};

/// Share of the total contributed by the largest `⌈fraction·n⌉` values.
pub fn top_share(values: &[f64], fraction: f64) -> f64 {
    let total: f64 = values.iter().sum();
    if values.is_empty() || total <= 0.0 {
        return 0.0;
    }
    let count = ((fraction * values.len() as f64).ceil() as usize).clamp(1, values.len());
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    sorted[..count].iter().sum::<f64>() / total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradRow {
    pub loss: String,
    pub user: u32,
    pub item: u32,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSummary {
    pub loss: String,
    pub interactions: usize,
    pub mean_norm: f64,
    pub top5_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub rows: Vec<GradRow>,
    pub summary: Vec<GradSummary>,
}

impl GradReport {
    pub fn summary_for(&self, loss: &str) -> Option<&GradSummary> {
        self.summary.iter().find(|s| s.loss == loss)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.rows)
    }

    pub fn write_summary_csv(&self, path: &Path) -> Result<()> {
        write_rows(path, &self.summary)
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let wrap = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut out = csv::Writer::from_path(path).map_err(wrap)?;
    for row in rows {
        out.serialize(row).map_err(wrap)?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Per-interaction user-gradient magnitudes on one shared sample.
///
/// `sample_count` interactions are drawn without replacement and each gets
/// `num_negatives` negatives; every loss sees the same interactions and
/// negatives. Quantiles for SL@K come from a fresh Monte Carlo refresh.
pub fn grad_report(
    model: &EmbeddingModel,
    train: &InteractionSet,
    losses: &[(String, LossConfig)],
    sample_count: usize,
    num_negatives: usize,
    seed: u64,
) -> Result<GradReport> {
    let all: Vec<(u32, u32)> = train.pairs().collect();
    if all.is_empty() {
        return Err(Error::EmptyDataset("no interactions to sample".into()));
    }
    let take = sample_count.min(all.len());
    let mut rng = derive_rng(seed, &[tag::DIAGNOSTICS]);
    let mut picked: Vec<usize> = index::sample(&mut rng, all.len(), take).into_vec();
    picked.sort_unstable();
    let pairs: Vec<(u32, u32)> = picked.iter().map(|&n| all[n]).collect();
    let negatives = pairs
        .iter()
        .enumerate()
        .map(|(n, &(u, _))| {
            let mut rng = derive_rng(seed, &[tag::DIAGNOSTICS, 1, n as u64]);
            sample_negatives(train, u, num_negatives, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (name, loss) in losses {
        loss.validate()?;
        let quantiles = if loss.variant.uses_quantiles() {
            let mut q = QuantileState::new(train.num_users(), loss.k, loss.num_negatives)?;
            q.refresh(model, train, 0, seed)?;
            Some(q)
        } else {
            None
        };
        let norms = interaction_gradient_norms(model, train, loss, quantiles.as_ref(), &pairs, &negatives)?;
        summary.push(GradSummary {
            loss: name.clone(),
            interactions: norms.len(),
            mean_norm: norms.iter().sum::<f64>() / norms.len() as f64,
            top5_share: top_share(&norms, 0.05),
        });
        rows.extend(pairs.iter().zip(&norms).map(|(&(user, item), &grad_norm)| GradRow {
            loss: name.clone(),
            user,
            item,
            grad_norm,
        }));
    }
    Ok(GradReport { rows, summary })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub loss: String,
    pub repetitions: usize,
    pub median_seconds: f64,
    pub min_seconds: f64,
    pub max_seconds: f64,
    pub mean_loss: f64,
    pub refreshed: bool,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times one epoch per repetition from an identical initialization.
///
/// Losses that keep quantiles refresh at the start of the timed epoch, so the
/// measurement covers the refresh cost.
pub fn bench_epochs(
    train: &InteractionSet,
    runs: &[(String, TrainConfig)],
    repetitions: usize,
) -> Result<Vec<BenchRow>> {
    if repetitions == 0 {
        return Err(Error::invalid("repetitions must be at least 1"));
    }
    runs.iter()
        .map(|(name, config)| {
            let mut config = config.clone();
            if config.loss.variant.uses_quantiles() {
                config.loss.t_beta = 1;
            }
            let mut seconds = Vec::with_capacity(repetitions);
            let mut mean_loss = f64::NAN;
            let mut refreshed = false;
            for _ in 0..repetitions {
                let mut trainer = Trainer::new(train, config.clone())?;
                let t = Instant::now();
                let record = trainer.run_epoch(train)?;
                seconds.push(t.elapsed().as_secs_f64());
                mean_loss = record.mean_loss;
                refreshed = record.refreshed;
            }
            Ok(BenchRow {
                loss: name.clone(),
                repetitions,
                median_seconds: median(&seconds),
                min_seconds: seconds.iter().cloned().fold(f64::INFINITY, f64::min),
                max_seconds: seconds.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                mean_loss,
                refreshed,
            })
        })
        .collect()
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    write_rows(path, rows)
}
