mod common;

use common::{fd_relative_error, random_grad_instance};
use slk_core::losses::{slk_term_decomposition, slk_user_gradient, slk_weight, sl_term};
use slk_core::model::norm;
use slk_core::optim::ModelGrad;
use slk_core::rng::derive_rng;
use slk_core::{EmbeddingModel, ScoreKind};

#[test]
fn user_gradient_matches_finite_differences() {
    for kind in [ScoreKind::Dot, ScoreKind::Cosine] {
        let mut rng = derive_rng(404, &[kind as u64]);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let inst = random_grad_instance(kind, &mut rng);
            worst = worst.max(fd_relative_error(&inst, 1e-5));
        }
        assert!(worst < 1e-4, "{kind}: worst relative error {worst:e}");
    }
}

fn user_row_grad(model: &EmbeddingModel, user: u32, pos: &[u32], negs: &[Vec<u32>], beta: f64, tau_w: f64, tau_d: f64) -> Vec<f64> {
    let mut grad = ModelGrad::for_model(model);
    slk_user_gradient(model, user, pos, negs, beta, tau_w, tau_d, &mut grad);
    grad.users.row(user).to_vec()
}

#[test]
fn large_tau_w_with_pinned_weight_leaves_weighted_softmax_gradient() {
    let mut rng = derive_rng(7, &[]);
    let inst = random_grad_instance(ScoreKind::Cosine, &mut rng);
    let (m, u) = (&inst.model, inst.user);
    let pos = &inst.positives[..1];
    let negs = &inst.negatives[..1];
    let s = m.score(u, pos[0]);
    let logit = 0.4;
    let w = 1.0 / (1.0 + (-logit as f64).exp());

    // Weighted softmax gradient alone: w times the plain SL gradient (weight pinned to 1).
    let sl_only = user_row_grad(m, u, pos, negs, -1e9, 1.0, inst.tau_d);
    let target: Vec<f64> = sl_only.iter().map(|g| w * g).collect();

    let mut gaps = Vec::new();
    for tau_w in [1e2, 1e4, 1e6] {
        let beta = s - logit * tau_w;
        assert!((slk_weight(s, beta, tau_w) - w).abs() < 1e-9);
        let g = user_row_grad(m, u, pos, negs, beta, tau_w, inst.tau_d);
        let gap: f64 = g.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        gaps.push(gap);
    }
    assert!(gaps[2] < 1e-6 * norm(&target).max(1.0));
    // The residual shrinks like 1/τ_w.
    assert!(gaps[1] < gaps[0] / 50.0 && gaps[2] < gaps[1] / 50.0, "{gaps:?}");
}

#[test]
fn identical_item_rows_leave_only_the_weight_term() {
    let mut model = EmbeddingModel::init(1, 2, 3, ScoreKind::Dot, 1).unwrap();
    let v = [0.3, -0.2, 0.5];
    model.items.row_mut(0).copy_from_slice(&v);
    model.items.row_mut(1).copy_from_slice(&v);
    model.users.row_mut(0).copy_from_slice(&[0.4, 0.1, -0.6]);
    let (beta, tau_w, tau_d) = (0.05, 2.0, 0.2);
    // Pool holds the positive itself and one negative with the same row.
    let negs = vec![vec![0, 1]];
    let dec = slk_term_decomposition(&model, 0, 0, &negs[0], beta, tau_w, tau_d);
    assert!(dec.sl_grad_norm < 1e-12);
    let s = model.score(0, 0);
    let w = slk_weight(s, beta, tau_w);
    let sl = sl_term(s, &[s, s], tau_d);
    assert!((sl - 2f64.ln()).abs() < 1e-12);

    let g = user_row_grad(&model, 0, &[0], &negs, beta, tau_w, tau_d);
    let coef = w * (1.0 - w) / tau_w * sl;
    for (gc, vc) in g.iter().zip(&v) {
        assert!((gc - coef * vc).abs() < 1e-12);
    }
}

#[test]
fn lower_weight_positive_gets_smaller_gradient_bound() {
    let mut rng = derive_rng(55, &[]);
    let mut checked = 0;
    for _ in 0..500 {
        let inst = random_grad_instance(ScoreKind::Cosine, &mut rng);
        if inst.positives.len() < 2 {
            continue;
        }
        let (m, u) = (&inst.model, inst.user);
        let (a, b) = (inst.positives[0], inst.positives[1]);
        // Same pool for both positives; it holds both, so every softmax term is nonnegative.
        let mut shared = inst.negatives[0].clone();
        shared.extend([a, b]);
        let pool = &shared;
        let (lo, hi) = if m.score(u, a) < m.score(u, b) { (a, b) } else { (b, a) };
        let d_lo = slk_term_decomposition(m, u, lo, pool, inst.beta, inst.tau_w, inst.tau_d);
        let d_hi = slk_term_decomposition(m, u, hi, pool, inst.beta, inst.tau_w, inst.tau_d);
        assert!(d_lo.weight < d_hi.weight);

        // Equalize the softmax pieces so only the weight differs.
        let equalized = slk_core::losses::TermDecomposition { weight: d_lo.weight, ..d_hi };
        assert!(equalized.bound(inst.tau_w) < d_hi.bound(inst.tau_w));

        // The bound really bounds the user-row gradient of each term.
        for (item, dec) in [(lo, d_lo), (hi, d_hi)] {
            let g = user_row_grad(m, u, &[item], std::slice::from_ref(pool), inst.beta, inst.tau_w, inst.tau_d);
            assert!(norm(&g) <= dec.bound(inst.tau_w) * (1.0 + 1e-12) + 1e-15);
        }
        checked += 1;
    }
    assert!(checked > 100);
}
