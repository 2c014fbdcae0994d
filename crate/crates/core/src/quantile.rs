//! Top-K quantile estimation.
//!
//! The Top-K quantile of a user is the K-th largest score over all items. It is
//! estimated from a pool holding every training positive plus a uniform sample
//! of negatives, which keeps the estimate sharp when K is small relative to the
//! number of positives.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::InteractionSet;
use crate::error::{Error, Result};
use crate::model::EmbeddingModel;
use crate::rng::{derive_rng, tag, Rng};

/// K-th largest value of `values` (1-based `k`). Reorders the slice.
pub fn kth_largest(values: &mut [f64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if values.len() < k {
        return Err(Error::PoolTooSmall {
            pool: values.len(),
            k,
        });
    }
    let (_, kth, _) = values.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    Ok(*kth)
}

/// Exact Top-K quantile over all item scores.
pub fn exact_topk_quantile(scores: &[f64], k: usize) -> Result<f64> {
    kth_largest(&mut scores.to_vec(), k)
}

/// Monte Carlo Top-K quantile over the pooled positive and sampled negative scores.
pub fn mc_topk_quantile(positive_scores: &[f64], negative_scores: &[f64], k: usize) -> Result<f64> {
    let mut pool = Vec::with_capacity(positive_scores.len() + negative_scores.len());
    pool.extend_from_slice(positive_scores);
    pool.extend_from_slice(negative_scores);
    kth_largest(&mut pool, k)
}

/// One subgradient step on the pinball loss at level `p`.
///
/// At `s == beta` the subgradient `1 - p` is used.
pub fn quantile_regression_step(beta: f64, samples: &[f64], p: f64, eta: f64) -> f64 {
    if samples.is_empty() {
        return beta;
    }
    let grad: f64 = samples
        .iter()
        .map(|&s| if s > beta { -p } else { 1.0 - p })
        .sum::<f64>()
        / samples.len() as f64;
    beta - eta * grad
}

/// Dvoretzky-Kiefer-Wolfowitz style bound `4·exp(-2·N·δ²)` on the probability
/// that the empirical quantile misses the true one by the margin whose cdf gap
/// is `delta`.
pub fn dkw_error_bound(n: usize, delta: f64) -> f64 {
    4.0 * (-2.0 * n as f64 * delta * delta).exp()
}

/// Draws `min(n, |N_u|)` distinct negatives of `user` uniformly.
///
/// Sparse users use rejection against the positive set; when more than half
/// the negatives are requested the complement is enumerated instead.
pub fn sample_distinct_negatives(
    train: &InteractionSet,
    user: u32,
    n: usize,
    rng: &mut Rng,
) -> Vec<u32> {
    let available = train.num_negatives(user);
    let take = n.min(available);
    if take == 0 {
        return Vec::new();
    }
    if take * 2 > available {
        let negatives: Vec<u32> = train.negatives(user).collect();
        return index::sample(rng, available, take)
            .iter()
            .map(|j| negatives[j])
            .collect();
    }
    let num_items = train.num_items() as u32;
    let mut chosen = HashSet::with_capacity(take);
    let mut out = Vec::with_capacity(take);
    while out.len() < take {
        let j = rng.random_range(0..num_items);
        if !train.contains(user, j) && chosen.insert(j) {
            out.push(j);
        }
    }
    out
}

/// Per-user quantile estimates shared by every interaction of that user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileState {
    pub beta: Vec<f64>,
    pub k: usize,
    pub sample_size: usize,
    /// Epoch of the last refresh; 0 means the initial all-zero state.
    pub last_update_epoch: usize,
}

impl QuantileState {
    pub fn new(num_users: usize, k: usize, sample_size: usize) -> Result<Self> {
        if k == 0 || sample_size == 0 {
            return Err(Error::invalid("quantile K and sample size must be at least 1"));
        }
        Ok(QuantileState {
            beta: vec![0.0; num_users],
            k,
            sample_size,
            last_update_epoch: 0,
        })
    }

    /// Re-estimates every user's quantile from current scores.
    ///
    /// User `u` draws from the stream `(seed, QUANTILE, epoch, u)`, so the
    /// result does not depend on thread scheduling.
    pub fn refresh(
        &mut self,
        model: &EmbeddingModel,
        train: &InteractionSet,
        epoch: usize,
        seed: u64,
    ) -> Result<()> {
        let (k, n) = (self.k, self.sample_size);
        let beta = (0..train.num_users() as u32)
            .into_par_iter()
            .map(|u| {
                let mut rng = derive_rng(seed, &[tag::QUANTILE, epoch as u64, u as u64]);
                let negatives = sample_distinct_negatives(train, u, n, &mut rng);
                let mut pool = Vec::with_capacity(train.positives(u).len() + negatives.len());
                let mut buf = Vec::new();
                model.score_items(u, train.positives(u), &mut buf);
                pool.extend_from_slice(&buf);
                model.score_items(u, &negatives, &mut buf);
                pool.extend_from_slice(&buf);
                kth_largest(&mut pool, k)
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(u) = beta.iter().position(|b| !b.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("quantile of user {u}"),
            });
        }
        self.beta = beta;
        self.last_update_epoch = epoch;
        Ok(())
    }
}

/// Estimated versus exact quantile for one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileDiagnostic {
    pub user: u32,
    pub estimate: f64,
    pub exact: f64,
    pub error: f64,
}

pub fn quantile_diagnostics(
    model: &EmbeddingModel,
    state: &QuantileState,
) -> Result<Vec<QuantileDiagnostic>> {
    (0..model.num_users() as u32)
        .into_par_iter()
        .map_init(Vec::new, |scores, u| {
            model.score_all(u, scores);
            let exact = kth_largest(scores, state.k)?;
            let estimate = state.beta[u as usize];
            Ok(QuantileDiagnostic {
                user: u,
                estimate,
                exact,
                error: estimate - exact,
            })
        })
        .collect()
}

pub fn write_diagnostics_csv(path: &Path, rows: &[QuantileDiagnostic]) -> Result<()> {
    let mut out = csv::Writer::from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    for row in rows {
        out.serialize(row)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
