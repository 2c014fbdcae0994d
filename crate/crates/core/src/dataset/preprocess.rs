use std::collections::{HashSet, VecDeque};

use rand::seq::{index, SliceRandom};

use super::{Corpus, DatasetSplit, InteractionSet, RawInteractions, Vocab};
use crate::error::{Error, Result};
use crate::rng::{derive_rng, tag};

/// Drops low ratings, collapses duplicates and prunes to the k-core.
///
/// Records without a rating always pass the threshold. Surviving keys get
/// contiguous ids in the order they first appear in `raw`.
pub fn kcore_filter(raw: &RawInteractions, k: usize, rating_threshold: f64) -> Result<Corpus> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }

    let mut user_tmp = Vocab::new();
    let mut item_tmp = Vocab::new();
    let mut seen = HashSet::new();
    let mut edges: Vec<(u32, u32)> = Vec::new();
    for rec in &raw.records {
        if rec.rating.is_some_and(|r| r < rating_threshold) {
            continue;
        }
        let u = user_tmp.intern(&rec.user_key);
        let i = item_tmp.intern(&rec.item_key);
        if seen.insert((u, i)) {
            edges.push((u, i));
        }
    }

    let n_users = user_tmp.len();
    let mut user_edges = vec![Vec::new(); n_users];
    let mut item_edges = vec![Vec::new(); item_tmp.len()];
    for (e, &(u, i)) in edges.iter().enumerate() {
        user_edges[u as usize].push(e);
        item_edges[i as usize].push(e);
    }
    let mut degree: Vec<usize> = user_edges
        .iter()
        .chain(item_edges.iter())
        .map(Vec::len)
        .collect();

    // Nodes 0..n_users are users, the rest items.
    let mut removed = vec![false; degree.len()];
    let mut alive = vec![true; edges.len()];
    let mut queue: VecDeque<usize> = (0..degree.len()).filter(|&n| degree[n] < k).collect();
    while let Some(node) = queue.pop_front() {
        if removed[node] {
            continue;
        }
        removed[node] = true;
        let incident = if node < n_users {
            &user_edges[node]
        } else {
            &item_edges[node - n_users]
        };
        for &e in incident {
            if !alive[e] {
                continue;
            }
            alive[e] = false;
            let (u, i) = edges[e];
            let other = if node < n_users {
                n_users + i as usize
            } else {
                u as usize
            };
            degree[other] -= 1;
            if !removed[other] && degree[other] < k {
                queue.push_back(other);
            }
        }
    }

    let mut users = Vocab::new();
    let mut items = Vocab::new();
    let mut pairs = Vec::new();
    for (e, &(u, i)) in edges.iter().enumerate() {
        if alive[e] {
            pairs.push((
                users.intern(user_tmp.key(u)),
                items.intern(item_tmp.key(i)),
            ));
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} records, {k}-core, rating threshold {rating_threshold}",
            raw.len()
        )));
    }
    let set = InteractionSet::from_pairs(users.len(), items.len(), pairs)?;
    Ok(Corpus { set, users, items })
}

/// Per-user `(train, validation, test)` sizes for a user with `n` interactions.
///
/// The train+validation share is `n·train_frac` rounded to nearest with halves
/// going to train; validation takes `round(share·val_frac)` with halves staying
/// in train. Every user with at least one interaction keeps one train item.
pub fn split_counts(n: usize, train_frac: f64, val_frac: f64) -> (usize, usize, usize) {
    if n == 0 {
        return (0, 0, 0);
    }
    let kept = ((n as f64 * train_frac + 0.5 + 1e-9).floor() as usize).clamp(1, n);
    let val = ((kept as f64 * val_frac - 0.5 - 1e-9).ceil().max(0.0) as usize).min(kept - 1);
    (kept - val, val, n - kept)
}

/// Random per-user partition into train, validation and test.
pub fn split_dataset(
    full: &Corpus,
    train_frac: f64,
    val_frac_of_train: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {train_frac} must lie in (0, 1)"
        )));
    }
    if !(0.0..1.0).contains(&val_frac_of_train) {
        return Err(Error::invalid(format!(
            "validation fraction {val_frac_of_train} must lie in [0, 1)"
        )));
    }
    let set = &full.set;
    let mut train = Vec::with_capacity(set.num_users());
    let mut validation = Vec::with_capacity(set.num_users());
    let mut test = Vec::with_capacity(set.num_users());
    for (u, items) in set.lists().iter().enumerate() {
        let mut shuffled = items.clone();
        shuffled.shuffle(&mut derive_rng(seed, &[tag::SPLIT, u as u64]));
        let (n_train, n_val, _) = split_counts(items.len(), train_frac, val_frac_of_train);
        let sorted = |part: &[u32]| {
            let mut v = part.to_vec();
            v.sort_unstable();
            v
        };
        train.push(sorted(&shuffled[..n_train]));
        validation.push(sorted(&shuffled[n_train..n_train + n_val]));
        test.push(sorted(&shuffled[n_train + n_val..]));
    }
    let (nu, ni) = (set.num_users(), set.num_items());
    Ok(DatasetSplit {
        train: InteractionSet::new(nu, ni, train)?,
        validation: InteractionSet::new(nu, ni, validation)?,
        test: InteractionSet::new(nu, ni, test)?,
        users: full.users.clone(),
        items: full.items.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shortfall {
    pub user: u32,
    pub requested: usize,
    pub added: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NoiseReport {
    pub added: usize,
    pub shortfalls: Vec<Shortfall>,
}

/// Flips `⌈ratio·|P_u|⌉` uniformly chosen negatives of every user to positives.
///
/// Users with too few negatives get all of them and are listed in the report.
pub fn inject_false_positives(
    train: &InteractionSet,
    ratio: f64,
    seed: u64,
) -> Result<(InteractionSet, NoiseReport)> {
    let none = InteractionSet::empty(train.num_users(), train.num_items());
    inject_false_positives_avoiding(train, &none, ratio, seed)
}

/// Like [`inject_false_positives`], but never flips an item of `held_out`.
///
/// The count per user is still `⌈r·|P_u|⌉` of the training positives.
pub fn inject_false_positives_avoiding(
    train: &InteractionSet,
    held_out: &InteractionSet,
    ratio: f64,
    seed: u64,
) -> Result<(InteractionSet, NoiseReport)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("noise ratio {ratio} must lie in [0, 1]")));
    }
    if held_out.num_users() != train.num_users() || held_out.num_items() != train.num_items() {
        return Err(Error::Shape("held-out set does not match the training set".into()));
    }
    let mut report = NoiseReport::default();
    let mut lists = Vec::with_capacity(train.num_users());
    for u in 0..train.num_users() as u32 {
        let pos = train.positives(u);
        let requested = (ratio * pos.len() as f64 - 1e-9).ceil().max(0.0) as usize;
        let candidates: Vec<u32> = train.negatives(u).filter(|&j| !held_out.contains(u, j)).collect();
        let take = requested.min(candidates.len());
        if take < requested {
            report.shortfalls.push(Shortfall {
                user: u,
                requested,
                added: take,
            });
        }
        let mut list = pos.to_vec();
        if take > 0 {
            let mut rng = derive_rng(seed, &[tag::NOISE, u as u64]);
            list.extend(index::sample(&mut rng, candidates.len(), take).iter().map(|j| candidates[j]));
            list.sort_unstable();
        }
        report.added += take;
        lists.push(list);
    }
    let noisy = InteractionSet::new(train.num_users(), train.num_items(), lists)?;
    Ok((noisy, report))
}
