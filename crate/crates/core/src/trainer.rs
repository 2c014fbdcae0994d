//! The training loop.
//!
//! Each epoch optionally refreshes the per-user quantiles, shuffles the
//! positive interactions with the run's main stream, and walks them in
//! mini-batches. Every interaction draws its own negatives from a stream
//! derived from `(seed, epoch, position)`, and a batch is split into a fixed
//! number of chunks whose gradients are merged in chunk order, so results are
//! identical for any thread count.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, EvalTarget, InteractionSet};
use crate::error::{Error, Result};
use crate::losses::{
    backprop_interaction_normed, bpr_term_grad, full_ranks, lambda_term_grad, lambda_weight,
    rescale_sampled_rank, sl_term_grad, slk_term_grad, LossConfig, LossVariant,
};
use crate::metrics::{evaluate, rank_order, EvalReport};
use crate::model::{score_rows_normed, EmbeddingModel, ScoreKind};
use crate::optim::{AdamConfig, AdamState, ModelGrad};
use crate::quantile::QuantileState;
use crate::rng::{derive_rng, tag, Rng};

/// Gradient work per batch is split into this many chunks.
const CHUNKS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Validation is evaluated every this many epochs; 0 disables it.
    pub eval_every: usize,
    pub score_kind: ScoreKind,
    pub dim: usize,
    pub eval_cutoffs: Vec<usize>,
}

impl TrainConfig {
    pub fn new(loss: LossConfig) -> Self {
        TrainConfig {
            score_kind: loss.variant.default_score_kind(),
            loss,
            lr: 0.01,
            weight_decay: 0.0,
            epochs: 200,
            batch_size: 1024,
            seed: 0,
            eval_every: 0,
            dim: 64,
            eval_cutoffs: vec![20],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.dim == 0 {
            return Err(Error::invalid("epochs, batch_size and dim must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid(format!("lr must be non-negative, got {}", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if self.eval_cutoffs.is_empty() || self.eval_cutoffs.contains(&0) {
            return Err(Error::invalid("eval_cutoffs must be nonempty and positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
    pub refresh_seconds: f64,
    pub refreshed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub epoch: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub evals: Vec<EvalPoint>,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        for row in &self.epochs {
            out.serialize(row)
                .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// `epoch,cutoff,metric,value` rows for every validation point.
    pub fn write_eval_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        writeln!(out, "epoch,cutoff,metric,value").map_err(io)?;
        for point in &self.evals {
            for s in &point.report.summary {
                writeln!(out, "{},{},ndcg,{}", point.epoch, s.k, s.ndcg).map_err(io)?;
                writeln!(out, "{},{},recall,{}", point.epoch, s.k, s.recall).map_err(io)?;
            }
        }
        out.flush().map_err(io)
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }
}

/// Draws `n` negatives of `user` uniformly, with replacement across draws.
pub fn sample_negatives(train: &InteractionSet, user: u32, n: usize, rng: &mut Rng) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(n);
    sample_negatives_into(train, user, n, rng, &mut out)?;
    Ok(out)
}

pub fn sample_negatives_into(
    train: &InteractionSet,
    user: u32,
    n: usize,
    rng: &mut Rng,
    out: &mut Vec<u32>,
) -> Result<()> {
    out.clear();
    let available = train.num_negatives(user);
    if available == 0 {
        return Err(Error::NoNegatives { user });
    }
    let num_items = train.num_items() as u32;
    if available * 8 < train.num_items() {
        // Dense user: index the complement directly.
        let negatives: Vec<u32> = train.negatives(user).collect();
        out.extend((0..n).map(|_| negatives[rng.random_range(0..negatives.len())]));
        return Ok(());
    }
    while out.len() < n {
        let j = rng.random_range(0..num_items);
        if !train.contains(user, j) {
            out.push(j);
        }
    }
    Ok(())
}

/// Re-estimates every user's quantile; see [`QuantileState::refresh`].
pub fn update_quantiles(
    model: &EmbeddingModel,
    train: &InteractionSet,
    state: &mut QuantileState,
    epoch: usize,
    seed: u64,
) -> Result<()> {
    state.refresh(model, train, epoch, seed)
}

#[derive(Default)]
struct Scratch {
    negatives: Vec<u32>,
    neg_scores: Vec<f64>,
    d_neg: Vec<f64>,
    weights: Vec<f64>,
    pool: Vec<(u32, f64)>,
    pool_rank: Vec<(u32, u32)>,
}

/// Full-item ranks of the users appearing in one batch.
struct RankTable {
    users: Vec<u32>,
    ranks: Vec<Vec<u32>>,
}

impl RankTable {
    fn build(model: &EmbeddingModel, batch: &[(u32, u32)]) -> Self {
        let mut users: Vec<u32> = batch.iter().map(|p| p.0).collect();
        users.sort_unstable();
        users.dedup();
        let ranks = users
            .par_iter()
            .map_init(Vec::new, |scores, &u| {
                model.score_all(u, scores);
                full_ranks(scores)
            })
            .collect();
        RankTable { users, ranks }
    }

    fn get(&self, user: u32) -> &[u32] {
        let idx = self.users.binary_search(&user).expect("user present in batch");
        &self.ranks[idx]
    }
}

struct StepContext<'a> {
    model: &'a EmbeddingModel,
    train: &'a InteractionSet,
    loss: &'a LossConfig,
    quantiles: Option<&'a QuantileState>,
    ranks: Option<&'a RankTable>,
    /// From [`EmbeddingModel::item_norms`]; empty for dot scores.
    item_norms: &'a [f64],
}

impl StepContext<'_> {
    fn item_norm(&self, item: u32) -> f64 {
        self.item_norms.get(item as usize).copied().unwrap_or(0.0)
    }

    fn score(&self, user: u32, user_norm: f64, item: u32) -> f64 {
        let m = self.model;
        score_rows_normed(m.score_kind, m.users.row(user), m.items.row(item), user_norm, self.item_norm(item))
    }
}

/// Loss of one interaction against the already drawn `scratch.negatives`;
/// its gradient, scaled by `scale`, is added to `grad`.
fn interaction_step(
    ctx: &StepContext<'_>,
    user: u32,
    positive: u32,
    scratch: &mut Scratch,
    scale: f64,
    grad: &mut ModelGrad,
) -> Result<f64> {
    let model = ctx.model;
    let loss = ctx.loss;
    let user_norm = model.user_norm(user);
    let s_pos = ctx.score(user, user_norm, positive);
    model.score_items_normed(user, user_norm, &scratch.negatives, ctx.item_norms, &mut scratch.neg_scores);
    scratch.d_neg.clear();
    scratch.d_neg.resize(scratch.negatives.len(), 0.0);
    let negs = &scratch.neg_scores;
    let (value, d_pos) = match loss.variant {
        LossVariant::Sl => sl_term_grad(s_pos, negs, loss.tau_d, &mut scratch.d_neg),
        LossVariant::SlAtK => {
            let beta = ctx.quantiles.expect("quantile state for SL@K").beta[user as usize];
            slk_term_grad(s_pos, negs, beta, loss.tau_w, loss.tau_d, &mut scratch.d_neg)
        }
        LossVariant::Bpr => bpr_term_grad(s_pos, negs, &mut scratch.d_neg),
        LossVariant::LambdaLossAtK => {
            let ranks = ctx.ranks.expect("rank table for LambdaLoss@K").get(user);
            let pi = ranks[positive as usize] as f64;
            scratch.weights.clear();
            for &j in &scratch.negatives {
                scratch.weights.push(lambda_weight(pi, ranks[j as usize] as f64, loss.k)?);
            }
            lambda_term_grad(s_pos, negs, &scratch.weights, &mut scratch.d_neg)
        }
        LossVariant::LambdaLossAtKSampled => {
            sampled_lambda_weights(ctx, user, user_norm, positive, scratch)?;
            lambda_term_grad(s_pos, &scratch.neg_scores, &scratch.weights, &mut scratch.d_neg)
        }
    };
    backprop_interaction_normed(
        model,
        user,
        user_norm,
        |j| ctx.item_norm(j),
        positive,
        &scratch.negatives,
        d_pos,
        &scratch.d_neg,
        scale,
        grad,
    );
    Ok(value)
}

/// Weights from ranks inside the pool `P_u ∪ N̂`, rescaled to the item set.
fn sampled_lambda_weights(
    ctx: &StepContext<'_>,
    user: u32,
    user_norm: f64,
    positive: u32,
    scratch: &mut Scratch,
) -> Result<()> {
    let model = ctx.model;
    scratch.pool.clear();
    for &i in ctx.train.positives(user) {
        scratch.pool.push((i, ctx.score(user, user_norm, i)));
    }
    for (&j, &s) in scratch.negatives.iter().zip(&scratch.neg_scores) {
        scratch.pool.push((j, s));
    }
    scratch.pool.sort_unstable_by(|a, b| a.0.cmp(&b.0));
    scratch.pool.dedup_by_key(|e| e.0);
    scratch.pool.sort_unstable_by(|a, b| rank_order(*a, *b));
    let pool_size = scratch.pool.len();
    let num_items = model.num_items();
    scratch.pool_rank.clear();
    scratch
        .pool_rank
        .extend(scratch.pool.iter().enumerate().map(|(p, e)| (e.0, p as u32 + 1)));
    scratch.pool_rank.sort_unstable();
    let rank_of = |item: u32, table: &[(u32, u32)]| {
        let idx = table
            .binary_search_by_key(&item, |e| e.0)
            .expect("item in pool");
        rescale_sampled_rank(table[idx].1 as usize, num_items, pool_size)
    };
    let pi = rank_of(positive, &scratch.pool_rank);
    scratch.weights.clear();
    for &j in &scratch.negatives {
        let pj = rank_of(j, &scratch.pool_rank);
        scratch.weights.push(lambda_weight(pi, pj, ctx.loss.k)?);
    }
    Ok(())
}

/// Norm of each interaction's contribution to its user-row gradient.
///
/// `negatives[n]` are the negatives for `pairs[n]`; every loss evaluated on
/// the same lists sees identical samples.
pub fn interaction_gradient_norms(
    model: &EmbeddingModel,
    train: &InteractionSet,
    loss: &LossConfig,
    quantiles: Option<&QuantileState>,
    pairs: &[(u32, u32)],
    negatives: &[Vec<u32>],
) -> Result<Vec<f64>> {
    let ranks = (loss.variant == LossVariant::LambdaLossAtK).then(|| RankTable::build(model, pairs));
    let item_norms = model.item_norms();
    let ctx = StepContext {
        model,
        train,
        loss,
        quantiles,
        ranks: ranks.as_ref(),
        item_norms: &item_norms,
    };
    pairs
        .par_iter()
        .zip(negatives)
        .map_init(
            || (ModelGrad::for_model(model), Scratch::default()),
            |(grad, scratch), (&(u, i), negs)| {
                grad.clear();
                scratch.negatives.clear();
                scratch.negatives.extend_from_slice(negs);
                interaction_step(&ctx, u, i, scratch, 1.0, grad)?;
                Ok(crate::model::norm(grad.users.row(u)))
            },
        )
        .collect()
}

/// A resumable training run.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: EmbeddingModel,
    pub adam: AdamState,
    pub quantiles: Option<QuantileState>,
    pub history: TrainHistory,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: Rng,
    workers: Vec<(ModelGrad, Scratch)>,
    grad: ModelGrad,
}

impl Trainer {
    pub fn new(train: &InteractionSet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if train.total_interactions() == 0 {
            return Err(Error::EmptyDataset("training set has no interactions".into()));
        }
        let model = EmbeddingModel::init(
            train.num_users(),
            train.num_items(),
            config.dim,
            config.score_kind,
            config.seed,
        )?;
        let adam = AdamState::new(&model, AdamConfig::new(config.lr, config.weight_decay));
        let quantiles = if config.loss.variant.uses_quantiles() {
            Some(QuantileState::new(
                train.num_users(),
                config.loss.k,
                config.loss.num_negatives,
            )?)
        } else {
            None
        };
        let rng = derive_rng(config.seed, &[tag::SHUFFLE]);
        Ok(Self::from_parts(config, model, adam, quantiles, TrainHistory::default(), 0, rng))
    }

    /// Reassembles a run from saved state.
    pub fn from_parts(
        config: TrainConfig,
        model: EmbeddingModel,
        adam: AdamState,
        quantiles: Option<QuantileState>,
        history: TrainHistory,
        epoch: usize,
        rng: Rng,
    ) -> Self {
        let workers = (0..CHUNKS)
            .map(|_| (ModelGrad::for_model(&model), Scratch::default()))
            .collect();
        let grad = ModelGrad::for_model(&model);
        Trainer {
            config,
            model,
            adam,
            quantiles,
            history,
            epoch,
            rng,
            workers,
            grad,
        }
    }

    pub fn batches_per_epoch(&self, train: &InteractionSet) -> usize {
        train.total_interactions().div_ceil(self.config.batch_size)
    }

    /// Whether the coming epoch starts with a quantile refresh.
    pub fn refreshes_next_epoch(&self) -> bool {
        self.quantiles.is_some() && (self.epoch + 1) % self.config.loss.t_beta == 0
    }

    pub fn run_epoch(&mut self, train: &InteractionSet) -> Result<EpochRecord> {
        if train.num_users() != self.model.num_users() || train.num_items() != self.model.num_items() {
            return Err(Error::Shape("training set does not match the model".into()));
        }
        let epoch = self.epoch + 1;
        let seed = self.config.seed;
        let started = Instant::now();

        let refreshed = self.refreshes_next_epoch();
        let mut refresh_seconds = 0.0;
        if refreshed {
            let t = Instant::now();
            let state = self.quantiles.as_mut().expect("checked above");
            state.refresh(&self.model, train, epoch, seed)?;
            refresh_seconds = t.elapsed().as_secs_f64();
        }

        let mut order: Vec<(u32, u32)> = train.pairs().collect();
        order.shuffle(&mut self.rng);

        let batch_size = self.config.batch_size;
        let n_neg = self.config.loss.num_negatives;
        let mut total_loss = 0.0;
        for (b, batch) in order.chunks(batch_size).enumerate() {
            let ranks = (self.config.loss.variant == LossVariant::LambdaLossAtK)
                .then(|| RankTable::build(&self.model, batch));
            let item_norms = self.model.item_norms();
            let ctx = StepContext {
                model: &self.model,
                train,
                loss: &self.config.loss,
                quantiles: self.quantiles.as_ref(),
                ranks: ranks.as_ref(),
                item_norms: &item_norms,
            };
            let scale = 1.0 / batch.len() as f64;
            let chunk_len = batch.len().div_ceil(CHUNKS);
            let offset = b * batch_size;
            let chunk_losses: Vec<f64> = batch
                .par_chunks(chunk_len)
                .zip(self.workers.par_iter_mut())
                .enumerate()
                .map(|(c, (chunk, (grad, scratch)))| {
                    grad.clear();
                    let mut sum = 0.0;
                    for (n, &(u, i)) in chunk.iter().enumerate() {
                        let position = (offset + c * chunk_len + n) as u64;
                        let mut rng = derive_rng(seed, &[tag::NEGATIVES, epoch as u64, position]);
                        sample_negatives_into(train, u, n_neg, &mut rng, &mut scratch.negatives)?;
                        sum += interaction_step(&ctx, u, i, scratch, scale, grad)?;
                    }
                    Ok(sum)
                })
                .collect::<Result<_>>()?;
            let batch_loss: f64 = chunk_losses.iter().sum();
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            total_loss += batch_loss;

            self.grad.clear();
            let used = batch.len().div_ceil(chunk_len);
            for (grad, _) in &self.workers[..used] {
                self.grad.merge_from(grad);
            }
            self.adam.step(&mut self.model, &self.grad)?;
        }

        self.epoch = epoch;
        let record = EpochRecord {
            epoch,
            mean_loss: total_loss / order.len() as f64,
            seconds: started.elapsed().as_secs_f64(),
            refresh_seconds,
            refreshed,
        };
        self.history.epochs.push(record.clone());
        Ok(record)
    }

    /// Runs the remaining epochs, evaluating on validation every `eval_every` epochs.
    pub fn fit(&mut self, split: &DatasetSplit) -> Result<()> {
        self.fit_until(split, self.config.epochs)
    }

    pub fn fit_until(&mut self, split: &DatasetSplit, last_epoch: usize) -> Result<()> {
        while self.epoch < last_epoch.min(self.config.epochs) {
            self.run_epoch(&split.train)?;
            let every = self.config.eval_every;
            if every > 0 && self.epoch % every == 0 && split.validation.total_interactions() > 0 {
                let report = evaluate(
                    &self.model,
                    split,
                    &self.config.eval_cutoffs,
                    EvalTarget::Validation,
                )?;
                self.history.evals.push(EvalPoint {
                    epoch: self.epoch,
                    report,
                });
            }
        }
        Ok(())
    }
}

/// Trains from scratch for `config.epochs` epochs.
pub fn train(split: &DatasetSplit, config: TrainConfig) -> Result<(EmbeddingModel, TrainHistory)> {
    let mut trainer = Trainer::new(&split.train, config)?;
    trainer.fit(split)?;
    Ok((trainer.model, trainer.history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split_dataset, Corpus};

    fn planted(users: usize, items: usize, per_user: usize, seed: u64) -> DatasetSplit {
        // Users and items fall into 5 groups; users like items of their group.
        let mut rng = derive_rng(seed, &[42]);
        let groups = 5;
        let mut pairs = Vec::new();
        for u in 0..users as u32 {
            let g = u as usize % groups;
            let block: Vec<u32> = (0..items as u32).filter(|i| *i as usize % groups == g).collect();
            for _ in 0..per_user {
                pairs.push((u, block[rng.random_range(0..block.len())]));
            }
        }
        let set = InteractionSet::from_pairs(users, items, pairs).unwrap();
        split_dataset(&Corpus::from_set(set), 0.8, 0.1, seed).unwrap()
    }

    fn small_config(variant: LossVariant) -> TrainConfig {
        let mut loss = LossConfig::new(variant);
        loss.num_negatives = 16;
        loss.k = 5;
        loss.t_beta = 2;
        let mut cfg = TrainConfig::new(loss);
        cfg.epochs = 3;
        cfg.batch_size = 64;
        cfg.dim = 8;
        cfg.seed = 9;
        cfg.lr = 0.05;
        cfg
    }

    #[test]
    fn forced_draw_and_determinism() {
        let train = InteractionSet::new(1, 5, vec![vec![0, 1, 3, 4]]).unwrap();
        let draws = sample_negatives(&train, 0, 20, &mut derive_rng(1, &[])).unwrap();
        assert!(draws.iter().all(|&j| j == 2));
        let sparse = InteractionSet::new(1, 50, vec![vec![3, 9]]).unwrap();
        let a = sample_negatives(&sparse, 0, 30, &mut derive_rng(5, &[])).unwrap();
        let b = sample_negatives(&sparse, 0, 30, &mut derive_rng(5, &[])).unwrap();
        assert_eq!(a, b);
        let full = InteractionSet::new(1, 3, vec![vec![0, 1, 2]]).unwrap();
        assert!(matches!(
            sample_negatives(&full, 0, 1, &mut derive_rng(5, &[])),
            Err(Error::NoNegatives { user: 0 })
        ));
    }

    #[test]
    fn every_variant_trains_finitely() {
        let split = planted(30, 40, 8, 1);
        for variant in LossVariant::ALL {
            let (model, history) = train(&split, small_config(variant)).unwrap();
            assert_eq!(history.epochs.len(), 3, "{variant}");
            assert!(history.losses().iter().all(|l| l.is_finite()), "{variant}");
            model.check_finite().unwrap();
        }
    }

    #[test]
    fn zero_lr_leaves_embeddings_untouched() {
        let split = planted(20, 30, 6, 2);
        let mut cfg = small_config(LossVariant::SlAtK);
        cfg.lr = 0.0;
        let init = EmbeddingModel::init(20, 30, cfg.dim, cfg.score_kind, cfg.seed).unwrap();
        let (model, _) = train(&split, cfg).unwrap();
        assert_eq!(model, init);
    }

    #[test]
    fn step_count_is_epochs_times_batches() {
        let split = planted(25, 30, 7, 3);
        let cfg = small_config(LossVariant::Sl);
        let mut trainer = Trainer::new(&split.train, cfg.clone()).unwrap();
        trainer.fit(&split).unwrap();
        let n = split.train.total_interactions();
        assert_eq!(trainer.adam.step_count as usize, cfg.epochs * n.div_ceil(cfg.batch_size));
    }

    #[test]
    fn runs_are_reproducible() {
        let split = planted(25, 30, 7, 4);
        let cfg = small_config(LossVariant::LambdaLossAtKSampled);
        let (m1, h1) = train(&split, cfg.clone()).unwrap();
        let (m2, h2) = train(&split, cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(h1.losses(), h2.losses());
    }

    #[test]
    fn quantiles_start_at_zero_and_refresh_on_schedule() {
        let split = planted(20, 30, 6, 5);
        let mut cfg = small_config(LossVariant::SlAtK);
        cfg.loss.t_beta = 2;
        let mut trainer = Trainer::new(&split.train, cfg).unwrap();
        assert!(trainer.quantiles.as_ref().unwrap().beta.iter().all(|&b| b == 0.0));
        let first = trainer.run_epoch(&split.train).unwrap();
        assert!(!first.refreshed);
        assert!(trainer.quantiles.as_ref().unwrap().beta.iter().all(|&b| b == 0.0));
        let second = trainer.run_epoch(&split.train).unwrap();
        assert!(second.refreshed);
        let state = trainer.quantiles.as_ref().unwrap();
        assert_eq!(state.last_update_epoch, 2);
        let frozen = state.beta.clone();
        trainer.run_epoch(&split.train).unwrap();
        assert_eq!(trainer.quantiles.as_ref().unwrap().beta, frozen);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let split = planted(25, 30, 7, 6);
        let cfg = small_config(LossVariant::SlAtK);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (m1, h1) = one.install(|| train(&split, cfg.clone())).unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let (m4, h4) = four.install(|| train(&split, cfg)).unwrap();
        assert_eq!(m1, m4);
        assert_eq!(h1.losses(), h4.losses());
    }
}
