//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use slk_core::losses::slk_user_gradient;
use slk_core::optim::ModelGrad;
use slk_core::rng::Rng;
use slk_core::{EmbeddingModel, ScoreKind};

pub fn naive_score(kind: ScoreKind, u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    match kind {
        ScoreKind::Dot => dot,
        ScoreKind::Cosine => {
            let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (nu * nv + 1e-12)
        }
    }
}

/// Weighted softmax loss of one user computed straight from the definition.
pub fn naive_slk_loss(
    model: &EmbeddingModel,
    user: u32,
    positives: &[u32],
    negatives: &[Vec<u32>],
    beta: f64,
    tau_w: f64,
    tau_d: f64,
) -> f64 {
    let u = model.users.row(user);
    let s = |i: u32| naive_score(model.score_kind, u, model.items.row(i));
    positives
        .iter()
        .zip(negatives)
        .map(|(&i, negs)| {
            let si = s(i);
            let w = 1.0 / (1.0 + (-(si - beta) / tau_w).exp());
            let sl = negs.iter().map(|&j| ((s(j) - si) / tau_d).exp()).sum::<f64>().ln();
            w * sl
        })
        .sum()
}

pub struct GradInstance {
    pub model: EmbeddingModel,
    pub user: u32,
    pub positives: Vec<u32>,
    pub negatives: Vec<Vec<u32>>,
    pub beta: f64,
    pub tau_w: f64,
    pub tau_d: f64,
}

/// 3 users, 8 items, d=4, with 1–4 positives and 1–6 sampled negatives each.
pub fn random_grad_instance(kind: ScoreKind, rng: &mut Rng) -> GradInstance {
    let normal = Normal::new(0.0, 0.7).unwrap();
    let mut model = EmbeddingModel::init(3, 8, 4, kind, 0).unwrap();
    for x in model.users.as_mut_slice().iter_mut().chain(model.items.as_mut_slice()) {
        *x = normal.sample(rng);
    }
    let user = rng.random_range(0..3);
    let num_pos = rng.random_range(1..=4usize);
    let mut items: Vec<u32> = (0..8).collect();
    for i in (1..items.len()).rev() {
        items.swap(i, rng.random_range(0..=i));
    }
    let positives = items[..num_pos].to_vec();
    let pool = &items[num_pos..];
    let negatives = positives
        .iter()
        .map(|_| {
            let n = rng.random_range(1..=6);
            (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
        })
        .collect();
    GradInstance {
        model,
        user,
        positives,
        negatives,
        beta: rng.random_range(-1.0..1.0),
        tau_w: rng.random_range(0.5..3.0),
        tau_d: rng.random_range(0.1..1.0),
    }
}

/// Norm-wise relative error between the analytic gradient and central
/// differences with step `h` over every model parameter.
pub fn fd_relative_error(inst: &GradInstance, h: f64) -> f64 {
    let mut grad = ModelGrad::for_model(&inst.model);
    slk_user_gradient(
        &inst.model,
        inst.user,
        &inst.positives,
        &inst.negatives,
        inst.beta,
        inst.tau_w,
        inst.tau_d,
        &mut grad,
    );
    let loss = |m: &EmbeddingModel| {
        naive_slk_loss(m, inst.user, &inst.positives, &inst.negatives, inst.beta, inst.tau_w, inst.tau_d)
    };
    let dim = inst.model.dim();
    let mut diff2 = 0.0;
    let mut ref2 = 0.0;
    let mut probe = inst.model.clone();
    for table in [Table::Users, Table::Items] {
        let rows = match table {
            Table::Users => probe.num_users(),
            Table::Items => probe.num_items(),
        };
        for idx in 0..rows * dim {
            let orig = *param(&mut probe, table, idx);
            *param(&mut probe, table, idx) = orig + h;
            let up = loss(&probe);
            *param(&mut probe, table, idx) = orig - h;
            let down = loss(&probe);
            *param(&mut probe, table, idx) = orig;
            let fd = (up - down) / (2.0 * h);
            let (r, c) = ((idx / dim) as u32, idx % dim);
            let analytic = match table {
                Table::Users => grad.users.row(r)[c],
                Table::Items => grad.items.row(r)[c],
            };
            diff2 += (analytic - fd).powi(2);
            ref2 += fd * fd;
        }
    }
    diff2.sqrt() / ref2.sqrt().max(1e-12)
}

#[derive(Clone, Copy)]
enum Table {
    Users,
    Items,
}

fn param(model: &mut EmbeddingModel, table: Table, idx: usize) -> &mut f64 {
    match table {
        Table::Users => &mut model.users.as_mut_slice()[idx],
        Table::Items => &mut model.items.as_mut_slice()[idx],
    }
}
