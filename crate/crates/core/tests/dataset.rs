use std::collections::{BTreeSet, HashMap, HashSet};

use rand::Rng as _;
use slk_core::dataset::{
    inject_false_positives, kcore_filter, load_split, save_split, split_dataset, Format,
};
use slk_core::rng::derive_rng;
use slk_core::{Corpus, InteractionSet, RawInteractions};

/// Alternating pruning that recomputes every degree from scratch each pass.
fn naive_kcore(edges: &[(String, String)], k: usize) -> BTreeSet<(String, String)> {
    let mut alive: BTreeSet<(String, String)> = edges.iter().cloned().collect();
    loop {
        let mut user_deg: HashMap<&str, usize> = HashMap::new();
        let mut item_deg: HashMap<&str, usize> = HashMap::new();
        for (u, i) in &alive {
            *user_deg.entry(u).or_default() += 1;
            *item_deg.entry(i).or_default() += 1;
        }
        let keep: BTreeSet<(String, String)> = alive
            .iter()
            .filter(|(u, i)| user_deg[u.as_str()] >= k && item_deg[i.as_str()] >= k)
            .cloned()
            .collect();
        if keep.len() == alive.len() {
            return keep;
        }
        alive = keep;
    }
}

fn random_edges(seed: u64, users: u32, items: u32, n: usize) -> Vec<(String, String)> {
    let mut rng = derive_rng(seed, &[1]);
    (0..n)
        .map(|_| {
            // Skewed item popularity so pruning has real work to do.
            let u = rng.random_range(0..users);
            let i = (rng.random::<f64>().powi(2) * items as f64) as u32;
            (format!("u{u}"), format!("i{i}"))
        })
        .collect()
}

fn corpus_pairs(c: &Corpus) -> BTreeSet<(String, String)> {
    c.set
        .pairs()
        .map(|(u, i)| (c.users.key(u).to_string(), c.items.key(i).to_string()))
        .collect()
}

#[test]
fn kcore_matches_independent_pruning_oracle() {
    for seed in 0..12 {
        let edges = random_edges(seed, 150, 120, 4000);
        let raw = RawInteractions::from_pairs(edges.iter().cloned());
        let expected = naive_kcore(&edges, 10);
        match kcore_filter(&raw, 10, 3.0) {
            Ok(corpus) => {
                assert_eq!(corpus_pairs(&corpus), expected, "seed {seed}");
                assert!(corpus.set.lists().iter().all(|l| l.len() >= 10));
            }
            Err(_) => assert!(expected.is_empty(), "seed {seed}"),
        }
    }
}

#[test]
fn kcore_output_is_a_fixed_point() {
    let edges = random_edges(99, 200, 150, 6000);
    let first = kcore_filter(&RawInteractions::from_pairs(edges), 10, 0.0).unwrap();
    let again_raw = RawInteractions::from_pairs(
        first
            .set
            .pairs()
            .map(|(u, i)| (first.users.key(u).to_string(), first.items.key(i).to_string())),
    );
    let second = kcore_filter(&again_raw, 10, 0.0).unwrap();
    // Ids follow first appearance, so compare by key rather than by id.
    assert_eq!(corpus_pairs(&second), corpus_pairs(&first));
    assert_eq!(second.set.total_interactions(), first.set.total_interactions());
}

/// Synthetic data at the size of the Health dataset: 1,974 users, 1,200 items.
fn health_scale() -> Corpus {
    let mut rng = derive_rng(5, &[2]);
    let mut pairs = Vec::new();
    for u in 0..1974u32 {
        let degree = 10 + (rng.random::<f64>().powi(3) * 60.0) as usize;
        let mut items = HashSet::new();
        while items.len() < degree {
            items.insert(rng.random_range(0..1200u32));
        }
        pairs.extend(items.into_iter().map(|i| (u, i)));
    }
    Corpus::from_set(InteractionSet::from_pairs(1974, 1200, pairs).unwrap())
}

#[test]
fn split_is_a_deterministic_partition_with_eighty_percent_train() {
    let corpus = health_scale();
    let split = split_dataset(&corpus, 0.8, 0.1, 11).unwrap();
    let again = split_dataset(&corpus, 0.8, 0.1, 11).unwrap();
    assert_eq!(split, again);
    assert_ne!(split, split_dataset(&corpus, 0.8, 0.1, 12).unwrap());

    for u in 0..corpus.set.num_users() as u32 {
        let tr: BTreeSet<u32> = split.train.positives(u).iter().copied().collect();
        let va: BTreeSet<u32> = split.validation.positives(u).iter().copied().collect();
        let te: BTreeSet<u32> = split.test.positives(u).iter().copied().collect();
        assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
        let union: BTreeSet<u32> = tr.union(&va).chain(te.iter()).copied().collect();
        let full: BTreeSet<u32> = corpus.set.positives(u).iter().copied().collect();
        assert_eq!(union, full);
        assert!(!tr.is_empty());
    }
    let total = corpus.set.total_interactions() as f64;
    let kept = (split.train.total_interactions() + split.validation.total_interactions()) as f64;
    let share = kept / total;
    assert!((share - 0.8).abs() <= 0.02, "train+validation share {share}");
}

#[test]
fn split_files_round_trip() {
    let raw = RawInteractions::from_pairs(
        (0..12).flat_map(|u| (0..12).filter(move |i| (u + i) % 3 != 0).map(move |i| (format!("user {u}"), format!("item-{i}")))),
    );
    let corpus = kcore_filter(&raw, 2, 0.0).unwrap();
    let split = split_dataset(&corpus, 0.8, 0.1, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_split(dir.path(), &split).unwrap();
    let back = load_split(dir.path()).unwrap();
    assert_eq!(back, split);
    let again = slk_core::dataset::load_interactions(&dir.path().join("train.tsv"), Format::Tsv).unwrap();
    assert_eq!(again.len(), split.train.total_interactions());
}

#[test]
fn noise_adds_exact_counts_of_new_pairs() {
    let corpus = health_scale();
    let r = 0.1;
    let (noisy, report) = inject_false_positives(&corpus.set, r, 8).unwrap();
    let mut expected_total = 0;
    for u in 0..corpus.set.num_users() as u32 {
        let before: HashSet<u32> = corpus.set.positives(u).iter().copied().collect();
        let after: HashSet<u32> = noisy.positives(u).iter().copied().collect();
        assert!(before.is_subset(&after));
        let added = after.difference(&before).count();
        let want = (r * before.len() as f64).ceil() as usize;
        assert_eq!(added, want, "user {u}");
        expected_total += want;
    }
    assert_eq!(report.added, expected_total);
    assert!(report.shortfalls.is_empty());
    assert_eq!(
        noisy.total_interactions(),
        corpus.set.total_interactions() + expected_total
    );
}

#[test]
fn train_noise_never_touches_held_out_items() {
    let corpus = health_scale();
    let split = split_dataset(&corpus, 0.8, 0.1, 2).unwrap();
    let (noisy, report) = split.with_train_noise(0.2, 4).unwrap();
    assert_eq!(noisy.validation, split.validation);
    assert_eq!(noisy.test, split.test);
    let mut added = 0;
    for u in 0..split.num_users() as u32 {
        let extra: Vec<u32> = noisy
            .train
            .positives(u)
            .iter()
            .copied()
            .filter(|&i| !split.train.contains(u, i))
            .collect();
        assert_eq!(extra.len(), (0.2 * split.train.positives(u).len() as f64).ceil() as usize);
        assert!(extra.iter().all(|&i| !split.validation.contains(u, i) && !split.test.contains(u, i)));
        added += extra.len();
    }
    assert_eq!(report.added, added);
}
