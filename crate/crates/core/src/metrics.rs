//! Exact Top-K evaluation over the full item set.
//!
//! Two rank notions appear here. [`rank_position`] is the tie-pessimistic count
//! `#{j : s_j >= s_i}` used by the loss bounds. [`RankedList`] breaks ties by
//! ascending item id and is what evaluation uses; the two agree whenever
//! scores are distinct.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetSplit, EvalTarget, InteractionSet};
use crate::error::{Error, Result};
use crate::model::EmbeddingModel;

/// `#{j : s_j >= s_i}`; always at least 1.
pub fn rank_position(scores: &[f64], item: u32) -> usize {
    let s = scores[item as usize];
    scores.iter().filter(|&&x| x >= s).count()
}

/// Position discount `1/log2(pos + 1)` for a 1-based position.
pub fn discount(position: usize) -> f64 {
    1.0 / ((position as f64) + 1.0).log2()
}

pub fn dcg_at_k(positions: &[usize], k: usize) -> f64 {
    positions
        .iter()
        .filter(|&&p| p <= k)
        .map(|&p| discount(p))
        .sum()
}

pub fn idcg_at_k(num_positives: usize, k: usize) -> f64 {
    (1..=num_positives.min(k)).map(discount).sum()
}

/// Number of positives whose score reaches the threshold.
pub fn hits_at_k(scores: &[f64], positives: &[u32], beta: f64) -> usize {
    positives
        .iter()
        .filter(|&&i| scores[i as usize] >= beta)
        .count()
}

/// Descending score, then ascending id.
pub fn rank_order(a: (u32, f64), b: (u32, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Items of one user in evaluation order, with masked items removed.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: u32,
    pub items: Vec<u32>,
    pub scores: Vec<f64>,
}

impl RankedList {
    /// Full ranking of every unmasked item. `mask` must be ascending.
    pub fn new(user: u32, scores: &[f64], mask: &[u32]) -> Self {
        Self::top(user, scores, mask, scores.len())
    }

    /// The first `depth` entries of the full ranking.
    pub fn top(user: u32, scores: &[f64], mask: &[u32], depth: usize) -> Self {
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(scores.len());
        let mut m = 0;
        for (i, &s) in scores.iter().enumerate() {
            let i = i as u32;
            while m < mask.len() && mask[m] < i {
                m += 1;
            }
            if m < mask.len() && mask[m] == i {
                continue;
            }
            entries.push((i, s));
        }
        let depth = depth.min(entries.len());
        if depth == 0 {
            entries.clear();
        } else if depth < entries.len() {
            entries.select_nth_unstable_by(depth - 1, |a, b| rank_order(*a, *b));
            entries.truncate(depth);
        }
        entries.sort_unstable_by(|a, b| rank_order(*a, *b));
        RankedList {
            user,
            items: entries.iter().map(|e| e.0).collect(),
            scores: entries.iter().map(|e| e.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// 1-based positions of the given (ascending) items that appear in the list.
    pub fn positions_of(&self, items: &[u32]) -> Vec<usize> {
        self.items
            .iter()
            .enumerate()
            .filter(|(_, i)| items.binary_search(i).is_ok())
            .map(|(p, _)| p + 1)
            .collect()
    }
}

fn require_targets(test_positives: &[u32]) -> Result<()> {
    if test_positives.is_empty() {
        return Err(Error::invalid("metric needs at least one held-out positive"));
    }
    Ok(())
}

/// NDCG@K of a ranked list against ascending held-out positives.
pub fn ndcg_at_k(ranked: &RankedList, test_positives: &[u32], k: usize) -> Result<f64> {
    require_targets(test_positives)?;
    let depth = k.min(ranked.len());
    let dcg: f64 = ranked.items[..depth]
        .iter()
        .enumerate()
        .filter(|(_, i)| test_positives.binary_search(i).is_ok())
        .map(|(p, _)| discount(p + 1))
        .sum();
    Ok(dcg / idcg_at_k(test_positives.len(), k))
}

/// Fraction of held-out positives that land in the Top-K.
pub fn recall_at_k(ranked: &RankedList, test_positives: &[u32], k: usize) -> Result<f64> {
    require_targets(test_positives)?;
    let depth = k.min(ranked.len());
    let hits = ranked.items[..depth]
        .iter()
        .filter(|i| test_positives.binary_search(i).is_ok())
        .count();
    Ok(hits as f64 / test_positives.len() as f64)
}

/// Compensated (Neumaier) mean.
pub fn stable_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for &x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            carry += (sum - t) + x;
        } else {
            carry += (x - t) + sum;
        }
        sum = t;
    }
    (sum + carry) / values.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffSummary {
    pub k: usize,
    pub ndcg: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub target: EvalTarget,
    pub cutoffs: Vec<usize>,
    /// Users with a nonempty target set, ascending.
    pub users: Vec<u32>,
    /// `ndcg[c][n]` is user `users[n]` at `cutoffs[c]`.
    pub ndcg: Vec<Vec<f64>>,
    pub recall: Vec<Vec<f64>>,
    pub summary: Vec<CutoffSummary>,
}

impl EvalReport {
    pub fn evaluable_users(&self) -> usize {
        self.users.len()
    }

    fn cutoff_index(&self, k: usize) -> Option<usize> {
        self.cutoffs.iter().position(|&c| c == k)
    }

    pub fn ndcg(&self, k: usize) -> Option<f64> {
        self.cutoff_index(k).map(|c| self.summary[c].ndcg)
    }

    pub fn recall(&self, k: usize) -> Option<f64> {
        self.cutoff_index(k).map(|c| self.summary[c].recall)
    }

    /// `cutoff,metric,value` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        out.write_record(["cutoff", "metric", "value"])
            .map_err(|e| csv_error(path, e))?;
        for s in &self.summary {
            for (metric, value) in [("ndcg", s.ndcg), ("recall", s.recall)] {
                out.write_record([s.k.to_string(), metric.to_string(), value.to_string()])
                    .map_err(|e| csv_error(path, e))?;
            }
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    /// Long format: `user,cutoff,metric,value`.
    pub fn write_per_user_csv(&self, path: &Path) -> Result<()> {
        let mut out = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        out.write_record(["user", "cutoff", "metric", "value"])
            .map_err(|e| csv_error(path, e))?;
        for (n, user) in self.users.iter().enumerate() {
            for (c, k) in self.cutoffs.iter().enumerate() {
                for (metric, value) in [("ndcg", self.ndcg[c][n]), ("recall", self.recall[c][n])] {
                    out.write_record([user.to_string(), k.to_string(), metric.into(), value.to_string()])
                        .map_err(|e| csv_error(path, e))?;
                }
            }
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "target": self.target,
            "evaluable_users": self.evaluable_users(),
            "cutoffs": self.summary,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, &self.summary_json())
            .map_err(|e| Error::io(path, e.into()))?;
        out.flush().map_err(|e| Error::io(path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Evaluates a model on the validation or test part of a split.
pub fn evaluate(
    model: &EmbeddingModel,
    split: &DatasetSplit,
    cutoffs: &[usize],
    target: EvalTarget,
) -> Result<EvalReport> {
    if model.num_users() != split.num_users() || model.num_items() != split.num_items() {
        return Err(Error::Shape(format!(
            "model is {}x{}, split is {}x{}",
            model.num_users(),
            model.num_items(),
            split.num_users(),
            split.num_items()
        )));
    }
    let mask = split.mask_for(target)?;
    evaluate_with(split.target(target), &mask, cutoffs, target, |u, out| {
        model.score_all(u, out)
    })
}

/// Evaluation against an arbitrary scorer that fills all item scores for a user.
pub fn evaluate_with<F>(
    targets: &InteractionSet,
    mask: &InteractionSet,
    cutoffs: &[usize],
    target: EvalTarget,
    scorer: F,
) -> Result<EvalReport>
where
    F: Fn(u32, &mut Vec<f64>) + Sync,
{
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::invalid("cutoffs must be nonempty and positive"));
    }
    let depth = *cutoffs.iter().max().unwrap();
    let users: Vec<u32> = (0..targets.num_users() as u32)
        .filter(|&u| !targets.positives(u).is_empty())
        .collect();
    let per_user: Vec<(Vec<f64>, Vec<f64>)> = users
        .par_iter()
        .map_init(Vec::new, |scores, &u| {
            scorer(u, scores);
            let ranked = RankedList::top(u, scores, mask.positives(u), depth);
            let truth = targets.positives(u);
            let ndcg = cutoffs
                .iter()
                .map(|&k| ndcg_at_k(&ranked, truth, k))
                .collect::<Result<Vec<_>>>()?;
            let recall = cutoffs
                .iter()
                .map(|&k| recall_at_k(&ranked, truth, k))
                .collect::<Result<Vec<_>>>()?;
            Ok((ndcg, recall))
        })
        .collect::<Result<_>>()?;

    let transpose = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<Vec<f64>> {
        (0..cutoffs.len())
            .map(|c| per_user.iter().map(|row| pick(row)[c]).collect())
            .collect()
    };
    let ndcg = transpose(|r| &r.0);
    let recall = transpose(|r| &r.1);
    let summary = cutoffs
        .iter()
        .enumerate()
        .map(|(c, &k)| CutoffSummary {
            k,
            ndcg: stable_mean(&ndcg[c]),
            recall: stable_mean(&recall[c]),
        })
        .collect();
    Ok(EvalReport {
        target,
        cutoffs: cutoffs.to_vec(),
        users,
        ndcg,
        recall,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(scores: &[f64]) -> RankedList {
        RankedList::new(0, scores, &[])
    }

    #[test]
    fn rank_position_examples() {
        assert_eq!(rank_position(&[0.1, 0.9, 0.3], 1), 1);
        let flat = [0.5; 5];
        assert!((0..5).all(|i| rank_position(&flat, i) == 5));
    }

    #[test]
    fn dcg_and_idcg_values() {
        assert_eq!(dcg_at_k(&[1], 5), 1.0);
        assert!((dcg_at_k(&[2], 2) - 0.630_929_753_571_457_4).abs() < 1e-12);
        assert_eq!(dcg_at_k(&[6, 9], 5), 0.0);
        assert_eq!(idcg_at_k(1, 7), 1.0);
        assert!((idcg_at_k(3, 2) - 1.630_929_753_571_457_4).abs() < 1e-12);
        assert_eq!(idcg_at_k(10, 4), dcg_at_k(&[1, 2, 3, 4], 4));
    }

    #[test]
    fn ndcg_and_recall_examples() {
        let ranked = list(&[0.9, 0.8, 0.7, 0.6, 0.5]);
        assert_eq!(ndcg_at_k(&ranked, &[0, 1], 5).unwrap(), 1.0);
        let second = ndcg_at_k(&ranked, &[1], 20).unwrap();
        assert!((second - 0.630_929_753_571_457_4).abs() < 1e-12);
        assert_eq!(recall_at_k(&ranked, &[0, 1, 2], 5).unwrap(), 1.0);
        assert_eq!(recall_at_k(&ranked, &[3, 4], 2).unwrap(), 0.0);
        assert_eq!(recall_at_k(&ranked, &[0, 2, 3, 4], 3).unwrap(), 0.5);
        assert!(ndcg_at_k(&ranked, &[], 5).is_err());
    }

    #[test]
    fn ties_break_by_ascending_id_and_mask_removes_items() {
        let ranked = RankedList::new(3, &[0.5, 0.7, 0.5, 0.7, 0.1], &[3]);
        assert_eq!(ranked.items, vec![1, 0, 2, 4]);
        let top = RankedList::top(3, &[0.5, 0.7, 0.5, 0.7, 0.1], &[3], 2);
        assert_eq!(top.items, vec![1, 0]);
    }

    #[test]
    fn hits_examples() {
        let scores = [0.2, 0.4, 0.6];
        assert_eq!(hits_at_k(&scores, &[0, 1, 2], -1.0), 3);
        assert_eq!(hits_at_k(&scores, &[0, 1, 2], 1.0), 0);
    }

    /// NDCG@K is not monotone in K below the number of positives.
    #[test]
    fn ndcg_can_drop_while_k_is_below_positive_count() {
        let ranked = list(&[0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.0]);
        let n1 = ndcg_at_k(&ranked, &[0, 9], 1).unwrap();
        let n2 = ndcg_at_k(&ranked, &[0, 9], 2).unwrap();
        assert_eq!(n1, 1.0);
        assert!(n2 < 0.62);
    }

    /// Full NDCG (all positions) and NDCG@5 disagree on some pair of orderings
    /// of 10 items with 3 positives.
    #[test]
    fn full_ndcg_and_truncated_ndcg_can_disagree() {
        let positions: Vec<Vec<usize>> = {
            let mut all = Vec::new();
            for a in 1..=10 {
                for b in a + 1..=10 {
                    for c in b + 1..=10 {
                        all.push(vec![a, b, c]);
                    }
                }
            }
            all
        };
        let full = |p: &Vec<usize>| dcg_at_k(p, 10) / idcg_at_k(3, 10);
        let at5 = |p: &Vec<usize>| dcg_at_k(p, 5) / idcg_at_k(3, 5);
        let flipped = positions.iter().any(|x| {
            positions
                .iter()
                .any(|y| full(x) > full(y) + 1e-12 && at5(x) + 1e-12 < at5(y))
        });
        assert!(flipped);
        // Concrete instance: (1, 2, 6) wins on full NDCG, (1, 3, 4) wins at 5.
        let x = vec![1, 2, 6];
        let y = vec![1, 3, 4];
        assert!(full(&x) > full(&y) && at5(&x) < at5(&y));
    }

    proptest! {
        #[test]
        fn rank_position_matches_sort(scores in prop::collection::vec(-3i32..3, 1..40)) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let mut sorted = scores.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            for i in 0..scores.len() {
                // last index of the score in descending order, 1-based
                let last = sorted.iter().rposition(|&x| x == scores[i]).unwrap() + 1;
                prop_assert_eq!(rank_position(&scores, i as u32), last);
            }
        }

        #[test]
        fn metrics_are_monotone_in_k(
            scores in prop::collection::vec(-1.0f64..1.0, 5..60),
            seed in any::<u64>(),
        ) {
            let n = scores.len();
            let mut truth: Vec<u32> = (0..n as u32).filter(|i| (seed >> (i % 64)) & 1 == 1).collect();
            if truth.is_empty() { truth.push(0); }
            let ranked = list(&scores);
            let positions = ranked.positions_of(&truth);
            let mut prev = (0.0, 0.0, 0.0, 0.0);
            for k in 1..=n + 2 {
                let ndcg = ndcg_at_k(&ranked, &truth, k).unwrap();
                let recall = recall_at_k(&ranked, &truth, k).unwrap();
                let dcg = dcg_at_k(&positions, k);
                let idcg = idcg_at_k(truth.len(), k);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&ndcg));
                prop_assert!(dcg >= prev.2 && idcg >= prev.3 && recall >= prev.1);
                if k > truth.len() {
                    prop_assert!(ndcg + 1e-12 >= prev.0);
                }
                prev = (ndcg, recall, dcg, idcg);
            }
        }

        #[test]
        fn ranked_list_ignores_input_permutation(
            raw in prop::collection::vec(0u8..4, 2..30),
            rot in 0usize..30,
        ) {
            let scores: Vec<f64> = raw.iter().map(|&x| x as f64 / 4.0).collect();
            let base = list(&scores);
            // Re-id items by rotation, rank, and map back: ties must still break by original id.
            let n = scores.len();
            let r = rot % n;
            let mut entries: Vec<(u32, f64)> = (0..n).map(|i| (i as u32, scores[i])).collect();
            entries.rotate_left(r);
            entries.sort_by(|a, b| rank_order(*a, *b));
            let items: Vec<u32> = entries.iter().map(|e| e.0).collect();
            prop_assert_eq!(items, base.items);
        }
    }
}
