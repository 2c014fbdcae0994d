//! Benchmark recipes: dataset locations, the shared preprocessing pipeline,
//! tuned hyperparameters and a synthetic stand-in at MovieLens-100K scale.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use slk_core::dataset::{kcore_filter, load_interactions, split_dataset, Format};
use slk_core::rng::derive_rng;
use slk_core::{Corpus, DatasetSplit, InteractionSet, LossConfig, LossVariant, TrainConfig};

pub const MOVIELENS_FILE: &str = "ml-100k/u.data";
pub const HEALTH_FILE: &str = "health/ratings.csv";

/// Negatives per positive on MovieLens; Health uses the default 1000.
pub const MOVIELENS_NEGATIVES: usize = 200;
pub const HEALTH_NEGATIVES: usize = 1000;

/// `$SLK_DATA_DIR`, or `data/` at the workspace root.
pub fn data_dir() -> PathBuf {
    std::env::var_os("SLK_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

/// 10-core filter on ratings ≥ 3, then a per-user 80/20 split with a tenth
/// of the train part held out for validation, seed 0.
pub fn load_benchmark(path: &Path, format: Format) -> Result<(Corpus, DatasetSplit), String> {
    if !path.exists() {
        return Err(format!("dataset not found at {}", path.display()));
    }
    let raw = load_interactions(path, format).map_err(|e| e.to_string())?;
    let corpus = kcore_filter(&raw, 10, 3.0).map_err(|e| e.to_string())?;
    let split = split_dataset(&corpus, 0.8, 0.1, 0).map_err(|e| e.to_string())?;
    Ok((corpus, split))
}

/// d = 64, batch 1024, 200 epochs, τ_d = 0.2.
pub fn recipe(
    variant: LossVariant,
    k: usize,
    lr: f64,
    weight_decay: f64,
    tau_w: f64,
    t_beta: usize,
    num_negatives: usize,
) -> TrainConfig {
    let loss = LossConfig {
        variant,
        tau_d: 0.2,
        tau_w,
        k,
        num_negatives,
        t_beta,
    };
    let mut cfg = TrainConfig::new(loss);
    cfg.lr = lr;
    cfg.weight_decay = weight_decay;
    cfg.eval_cutoffs = vec![k];
    cfg
}

pub fn movielens_slk20() -> TrainConfig {
    recipe(LossVariant::SlAtK, 20, 0.01, 0.0, 3.0, 5, MOVIELENS_NEGATIVES)
}

/// Exact ranks train best at lr 0.001; the sampled-rank variant at 0.01.
pub fn movielens_lambda20(sampled: bool) -> TrainConfig {
    if sampled {
        recipe(LossVariant::LambdaLossAtKSampled, 20, 0.01, 1e-5, 1.0, 5, MOVIELENS_NEGATIVES)
    } else {
        recipe(LossVariant::LambdaLossAtK, 20, 0.001, 1e-5, 1.0, 5, MOVIELENS_NEGATIVES)
    }
}

pub fn health_config(variant: LossVariant, k: usize) -> TrainConfig {
    let (tau_w, t_beta) = match k {
        10 => (2.5, 20),
        50 | 75 => (2.25, 5),
        _ => (2.5, 5),
    };
    recipe(variant, k, 0.1, 0.0, tau_w, t_beta, HEALTH_NEGATIVES)
}

/// Planted low-rank preferences with 939 users, 1,016 items and about 80k
/// interactions, split like the real benchmarks.
pub fn synthetic_movielens(seed: u64) -> DatasetSplit {
    const USERS: u32 = 939;
    const ITEMS: u32 = 1016;
    const RANK: usize = 8;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = derive_rng(seed, &[0x5e]);
    let mut factors = |n: u32| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..RANK).map(|_| normal.sample(&mut rng)).collect()).collect()
    };
    let users = factors(USERS);
    let items = factors(ITEMS);
    let mut rng = derive_rng(seed, &[0x5f]);
    let mut pairs = Vec::new();
    for (u, p) in users.iter().enumerate() {
        let degree = rng.random_range(20..150usize);
        let mut scored: Vec<(f64, u32)> = items
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let affinity: f64 = p.iter().zip(q).map(|(a, b)| a * b).sum();
                (affinity + 2.0 * normal.sample(&mut rng), i as u32)
            })
            .collect();
        scored.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
        let chosen: HashSet<u32> = scored[..degree].iter().map(|s| s.1).collect();
        pairs.extend(chosen.into_iter().map(|i| (u as u32, i)));
    }
    let set = InteractionSet::from_pairs(USERS as usize, ITEMS as usize, pairs).expect("ids in range");
    split_dataset(&Corpus::from_set(set), 0.8, 0.1, 0).expect("valid fractions")
}
