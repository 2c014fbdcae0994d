//! Ranking losses and their gradients.
//!
//! Every loss is written per positive interaction `(u, i)` against a list of
//! negative scores. The `*_grad` functions return the loss value and fill the
//! partial derivatives with respect to the positive score and each negative
//! score; [`backprop_interaction`] pushes those through the score function into
//! embedding gradients.
//!
//! "Full form" means the negative list is every item score of the user,
//! including the positive itself.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::rank_order;
use crate::model::{accumulate_score_grad, accumulate_score_grad_normed, norm, EmbeddingModel, ScoreKind};
use crate::optim::ModelGrad;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossVariant {
    #[serde(rename = "sl")]
    Sl,
    #[serde(rename = "sl@k")]
    SlAtK,
    #[serde(rename = "bpr")]
    Bpr,
    #[serde(rename = "lambdaloss@k")]
    LambdaLossAtK,
    #[serde(rename = "lambdaloss@k-s")]
    LambdaLossAtKSampled,
}

impl LossVariant {
    pub const ALL: [LossVariant; 5] = [
        LossVariant::Sl,
        LossVariant::SlAtK,
        LossVariant::Bpr,
        LossVariant::LambdaLossAtK,
        LossVariant::LambdaLossAtKSampled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossVariant::Sl => "sl",
            LossVariant::SlAtK => "sl@k",
            LossVariant::Bpr => "bpr",
            LossVariant::LambdaLossAtK => "lambdaloss@k",
            LossVariant::LambdaLossAtKSampled => "lambdaloss@k-s",
        }
    }

    /// Softmax-family losses train on cosine scores, pairwise ones on dot products.
    pub fn default_score_kind(self) -> ScoreKind {
        match self {
            LossVariant::Sl | LossVariant::SlAtK => ScoreKind::Cosine,
            _ => ScoreKind::Dot,
        }
    }

    pub fn uses_quantiles(self) -> bool {
        self == LossVariant::SlAtK
    }
}

impl std::fmt::Display for LossVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace(['_', ' '], "");
        Ok(match key.as_str() {
            "sl" | "softmax" => LossVariant::Sl,
            "sl@k" | "slk" | "slatk" => LossVariant::SlAtK,
            "bpr" => LossVariant::Bpr,
            "lambdaloss@k" | "lambdaloss" | "lambdalossatk" => LossVariant::LambdaLossAtK,
            "lambdaloss@k-s" | "lambdaloss-s" | "lambdalossatks" | "lambdaloss@ks" => {
                LossVariant::LambdaLossAtKSampled
            }
            _ => return Err(Error::invalid(format!("unknown loss {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub variant: LossVariant,
    pub tau_d: f64,
    pub tau_w: f64,
    pub k: usize,
    pub num_negatives: usize,
    pub t_beta: usize,
}

impl LossConfig {
    pub fn new(variant: LossVariant) -> Self {
        LossConfig {
            variant,
            tau_d: 0.2,
            tau_w: 2.5,
            k: 20,
            num_negatives: 1000,
            t_beta: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_d.is_finite() && self.tau_d > 0.0) {
            return Err(Error::invalid(format!("tau_d must be positive, got {}", self.tau_d)));
        }
        if !(self.tau_w.is_finite() && self.tau_w > 0.0) {
            return Err(Error::invalid(format!("tau_w must be positive, got {}", self.tau_w)));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.num_negatives == 0 {
            return Err(Error::invalid("num_negatives must be at least 1"));
        }
        if self.t_beta == 0 {
            return Err(Error::invalid("t_beta must be at least 1"));
        }
        Ok(())
    }
}

/// `log Σ exp(x)` with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax term `log Σ_j exp((s_j - s_i)/τ_d)`.
pub fn sl_term(positive: f64, negatives: &[f64], tau_d: f64) -> f64 {
    let shifted: Vec<f64> = negatives.iter().map(|s| (s - positive) / tau_d).collect();
    log_sum_exp(&shifted)
}

/// `sl_term` plus its partial derivatives.
///
/// Returns `(value, ∂/∂s_i)` and writes `∂/∂s_j` into `d_negatives`.
pub fn sl_term_grad(positive: f64, negatives: &[f64], tau_d: f64, d_negatives: &mut [f64]) -> (f64, f64) {
    let mut max = f64::NEG_INFINITY;
    for (d, &s) in d_negatives.iter_mut().zip(negatives) {
        *d = (s - positive) / tau_d;
        max = max.max(*d);
    }
    let mut total = 0.0;
    for d in d_negatives.iter_mut() {
        *d = (*d - max).exp();
        total += *d;
    }
    let value = max + total.ln();
    let mut d_pos = 0.0;
    for d in d_negatives.iter_mut() {
        *d /= total * tau_d;
        d_pos -= *d;
    }
    (value, d_pos)
}

/// Sum of softmax terms over `(positive score, negative scores)` pairs.
pub fn sl_loss<'a>(terms: impl IntoIterator<Item = (f64, &'a [f64])>, tau_d: f64) -> f64 {
    terms.into_iter().map(|(p, n)| sl_term(p, n, tau_d)).sum()
}

/// Full-form softmax loss of one user.
pub fn full_sl_loss(scores: &[f64], positives: &[u32], tau_d: f64) -> f64 {
    sl_loss(positives.iter().map(|&i| (scores[i as usize], scores)), tau_d)
}

/// Quantile weight `σ((s_i - β)/τ_w)`.
pub fn slk_weight(score: f64, beta: f64, tau_w: f64) -> f64 {
    sigmoid((score - beta) / tau_w)
}

pub fn slk_loss<'a>(
    terms: impl IntoIterator<Item = (f64, &'a [f64])>,
    beta: f64,
    tau_w: f64,
    tau_d: f64,
) -> f64 {
    terms
        .into_iter()
        .map(|(p, n)| slk_weight(p, beta, tau_w) * sl_term(p, n, tau_d))
        .sum()
}

/// Full-form SL@K loss of one user.
pub fn full_slk_loss(scores: &[f64], positives: &[u32], beta: f64, tau_w: f64, tau_d: f64) -> f64 {
    slk_loss(
        positives.iter().map(|&i| (scores[i as usize], scores)),
        beta,
        tau_w,
        tau_d,
    )
}

/// One weighted softmax term and its partials; `beta` is held constant.
pub fn slk_term_grad(
    positive: f64,
    negatives: &[f64],
    beta: f64,
    tau_w: f64,
    tau_d: f64,
    d_negatives: &mut [f64],
) -> (f64, f64) {
    let (sl, d_pos_sl) = sl_term_grad(positive, negatives, tau_d, d_negatives);
    let w = slk_weight(positive, beta, tau_w);
    for d in d_negatives.iter_mut() {
        *d *= w;
    }
    let d_pos = w * d_pos_sl + w * (1.0 - w) / tau_w * sl;
    (w * sl, d_pos)
}

pub fn bpr_loss(positive: f64, negative: f64) -> f64 {
    softplus(negative - positive)
}

/// BPR averaged over the negatives of one interaction.
pub fn bpr_term_grad(positive: f64, negatives: &[f64], d_negatives: &mut [f64]) -> (f64, f64) {
    let scale = 1.0 / negatives.len() as f64;
    let mut value = 0.0;
    let mut d_pos = 0.0;
    for (d, &s) in d_negatives.iter_mut().zip(negatives) {
        value += softplus(s - positive);
        *d = scale * sigmoid(s - positive);
        d_pos -= *d;
    }
    (value * scale, d_pos)
}

/// Pairwise weight for ranks `pi_i` and `pi_j` at cutoff `k`.
///
/// `η = 1/log2(Δ+1) − 1/log2(Δ+2)` for `Δ = |π_i − π_j|`, boosted by
/// `1/(1 − 1/log2(max π + 1))` when the lower of the two sits past the cutoff.
pub fn lambda_weight(pi_i: f64, pi_j: f64, k: usize) -> Result<f64> {
    let delta = (pi_i - pi_j).abs();
    if delta == 0.0 {
        return Err(Error::TiedRanks(pi_i));
    }
    let eta = 1.0 / (delta + 1.0).log2() - 1.0 / (delta + 2.0).log2();
    let worst = pi_i.max(pi_j);
    if worst > k as f64 {
        Ok(eta / (1.0 - 1.0 / (worst + 1.0).log2()))
    } else {
        Ok(eta)
    }
}

/// Weighted pairwise softplus for one interaction with precomputed weights.
pub fn lambda_term_grad(
    positive: f64,
    negatives: &[f64],
    weights: &[f64],
    d_negatives: &mut [f64],
) -> (f64, f64) {
    let mut value = 0.0;
    let mut d_pos = 0.0;
    for ((d, &s), &mu) in d_negatives.iter_mut().zip(negatives).zip(weights) {
        value += mu * softplus(s - positive);
        *d = mu * sigmoid(s - positive);
        d_pos -= *d;
    }
    (value, d_pos)
}

/// 1-based rank of every item under descending score, ascending id.
pub fn full_ranks(scores: &[f64]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..scores.len() as u32).collect();
    order.sort_unstable_by(|&a, &b| rank_order((a, scores[a as usize]), (b, scores[b as usize])));
    let mut ranks = vec![0u32; scores.len()];
    for (pos, &item) in order.iter().enumerate() {
        ranks[item as usize] = pos as u32 + 1;
    }
    ranks
}

/// Exact LambdaLoss@K of one user over every positive/negative pair.
pub fn lambdaloss_at_k(scores: &[f64], positives: &[u32], k: usize) -> Result<f64> {
    let ranks = full_ranks(scores);
    let mut total = 0.0;
    let mut p = 0;
    for j in 0..scores.len() as u32 {
        if p < positives.len() && positives[p] == j {
            p += 1;
            continue;
        }
        for &i in positives {
            let mu = lambda_weight(ranks[i as usize] as f64, ranks[j as usize] as f64, k)?;
            total += mu * softplus(scores[j as usize] - scores[i as usize]);
        }
    }
    Ok(total)
}

/// Scales a within-pool rank to the full item set.
pub fn rescale_sampled_rank(sample_rank: usize, num_items: usize, pool_size: usize) -> f64 {
    sample_rank as f64 * num_items as f64 / pool_size as f64
}

/// Pushes score-space partials of one interaction into embedding gradients.
///
/// `coef_scale` multiplies every partial (used for batch averaging).
#[allow(clippy::too_many_arguments)]
pub fn backprop_interaction(
    model: &EmbeddingModel,
    user: u32,
    positive: u32,
    negatives: &[u32],
    d_positive: f64,
    d_negatives: &[f64],
    coef_scale: f64,
    grad: &mut ModelGrad,
) {
    let user_norm = model.user_norm(user);
    let item_norm = |j: u32| match model.score_kind {
        ScoreKind::Dot => 0.0,
        ScoreKind::Cosine => norm(model.items.row(j)),
    };
    backprop_interaction_normed(
        model, user, user_norm, item_norm, positive, negatives, d_positive, d_negatives, coef_scale, grad,
    );
}

/// [`backprop_interaction`] with cached row norms, as produced by
/// [`EmbeddingModel::user_norm`] and [`EmbeddingModel::item_norms`].
#[allow(clippy::too_many_arguments)]
pub fn backprop_interaction_normed(
    model: &EmbeddingModel,
    user: u32,
    user_norm: f64,
    item_norm: impl Fn(u32) -> f64,
    positive: u32,
    negatives: &[u32],
    d_positive: f64,
    d_negatives: &[f64],
    coef_scale: f64,
    grad: &mut ModelGrad,
) {
    let kind = model.score_kind;
    let u = model.users.row(user);
    let mut push = |item: u32, coef: f64| {
        accumulate_score_grad_normed(
            kind,
            u,
            model.items.row(item),
            user_norm,
            item_norm(item),
            coef,
            grad.users.row_mut(user),
            grad.items.row_mut(item),
        );
    };
    push(positive, coef_scale * d_positive);
    for (&j, &d) in negatives.iter().zip(d_negatives) {
        push(j, coef_scale * d);
    }
}

/// Per-positive SL@K loss and gradient for one user with explicit negative lists.
///
/// Returns the total loss; gradients for the user row and every touched item
/// row are added to `grad`.
pub fn slk_user_gradient(
    model: &EmbeddingModel,
    user: u32,
    positives: &[u32],
    negatives: &[Vec<u32>],
    beta: f64,
    tau_w: f64,
    tau_d: f64,
    grad: &mut ModelGrad,
) -> f64 {
    let mut total = 0.0;
    let mut neg_scores = Vec::new();
    for (&i, negs) in positives.iter().zip(negatives) {
        model.score_items(user, negs, &mut neg_scores);
        let mut d_neg = vec![0.0; negs.len()];
        let (value, d_pos) = slk_term_grad(
            model.score(user, i),
            &neg_scores,
            beta,
            tau_w,
            tau_d,
            &mut d_neg,
        );
        backprop_interaction(model, user, i, negs, d_pos, &d_neg, 1.0, grad);
        total += value;
    }
    total
}

/// The two pieces of one positive's user-row gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermDecomposition {
    pub weight: f64,
    pub sl_value: f64,
    /// `‖∇_u L_SL(u, i)‖`
    pub sl_grad_norm: f64,
    /// `‖∇_u s_ui‖`
    pub score_grad_norm: f64,
}

impl TermDecomposition {
    /// `w·(‖∇L_SL‖ + L_SL·‖∇s‖/τ_w)`, an upper bound on the term's gradient norm.
    pub fn bound(&self, tau_w: f64) -> f64 {
        self.weight * (self.sl_grad_norm + self.sl_value * self.score_grad_norm / tau_w)
    }
}

pub fn slk_term_decomposition(
    model: &EmbeddingModel,
    user: u32,
    positive: u32,
    negatives: &[u32],
    beta: f64,
    tau_w: f64,
    tau_d: f64,
) -> TermDecomposition {
    let kind = model.score_kind;
    let dim = model.dim();
    let u = model.users.row(user);
    let s_i = model.score(user, positive);
    let mut neg_scores = Vec::new();
    model.score_items(user, negatives, &mut neg_scores);
    let mut d_neg = vec![0.0; negatives.len()];
    let (sl_value, d_pos) = sl_term_grad(s_i, &neg_scores, tau_d, &mut d_neg);

    let mut scratch = vec![0.0; dim];
    let mut g_sl = vec![0.0; dim];
    accumulate_score_grad(kind, u, model.items.row(positive), d_pos, &mut g_sl, &mut scratch);
    for (&j, &d) in negatives.iter().zip(&d_neg) {
        accumulate_score_grad(kind, u, model.items.row(j), d, &mut g_sl, &mut scratch);
    }
    let mut g_s = vec![0.0; dim];
    accumulate_score_grad(kind, u, model.items.row(positive), 1.0, &mut g_s, &mut scratch);
    TermDecomposition {
        weight: slk_weight(s_i, beta, tau_w),
        sl_value,
        sl_grad_norm: norm(&g_sl),
        score_grad_norm: norm(&g_s),
    }
}
