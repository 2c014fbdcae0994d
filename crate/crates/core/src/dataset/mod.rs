//! Interaction data: raw logs, the per-user positive-item structure used by
//! every other module, and the preprocessing pipeline (rating threshold,
//! k-core filtering, per-user splits, false-positive noise).

mod io;
mod preprocess;

use std::collections::HashMap;

use crate::error::{Error, Result};

pub use io::{load_interactions, load_split, save_split, write_interactions, Format};
pub use preprocess::{
    inject_false_positives, inject_false_positives_avoiding, kcore_filter, split_dataset, split_counts, NoiseReport, Shortfall,
};

/// One line of a raw interaction log.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub user_key: String,
    pub item_key: String,
    pub rating: Option<f64>,
    pub timestamp: Option<i64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawInteractions {
    pub records: Vec<RawRecord>,
}

impl RawInteractions {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Builds unrated records from `(user, item)` key pairs.
    pub fn from_pairs<U: ToString, I: ToString>(pairs: impl IntoIterator<Item = (U, I)>) -> Self {
        RawInteractions {
            records: pairs
                .into_iter()
                .map(|(u, i)| RawRecord {
                    user_key: u.to_string(),
                    item_key: i.to_string(),
                    rating: None,
                    timestamp: None,
                })
                .collect(),
        }
    }
}

/// Binary implicit feedback over contiguous user and item id spaces.
///
/// `positives[u]` is the strictly ascending list of items user `u` interacted
/// with. Everything not in that list is a negative for `u`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InteractionSet {
    num_users: usize,
    num_items: usize,
    positives: Vec<Vec<u32>>,
    total: usize,
}

impl InteractionSet {
    /// Validates and wraps per-user lists that are already sorted and deduplicated.
    pub fn new(num_users: usize, num_items: usize, positives: Vec<Vec<u32>>) -> Result<Self> {
        if positives.len() != num_users {
            return Err(Error::Shape(format!(
                "{} positive lists for {} users",
                positives.len(),
                num_users
            )));
        }
        let mut total = 0;
        for (u, items) in positives.iter().enumerate() {
            for w in items.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::invalid(format!(
                        "positives of user {u} are not strictly ascending"
                    )));
                }
            }
            if let Some(&last) = items.last() {
                if last as usize >= num_items {
                    return Err(Error::invalid(format!(
                        "user {u} has item {last} outside 0..{num_items}"
                    )));
                }
            }
            total += items.len();
        }
        Ok(InteractionSet {
            num_users,
            num_items,
            positives,
            total,
        })
    }

    /// Builds a set from `(user, item)` pairs in any order; duplicates collapse.
    pub fn from_pairs(
        num_users: usize,
        num_items: usize,
        pairs: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self> {
        let mut positives = vec![Vec::new(); num_users];
        for (u, i) in pairs {
            let list = positives
                .get_mut(u as usize)
                .ok_or_else(|| Error::invalid(format!("user {u} outside 0..{num_users}")))?;
            list.push(i);
        }
        for list in &mut positives {
            list.sort_unstable();
            list.dedup();
        }
        Self::new(num_users, num_items, positives)
    }

    pub fn empty(num_users: usize, num_items: usize) -> Self {
        InteractionSet {
            num_users,
            num_items,
            positives: vec![Vec::new(); num_users],
            total: 0,
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn total_interactions(&self) -> usize {
        self.total
    }

    pub fn density(&self) -> f64 {
        if self.num_users == 0 || self.num_items == 0 {
            return 0.0;
        }
        self.total as f64 / (self.num_users as f64 * self.num_items as f64)
    }

    pub fn positives(&self, user: u32) -> &[u32] {
        &self.positives[user as usize]
    }

    pub fn lists(&self) -> &[Vec<u32>] {
        &self.positives
    }

    pub fn contains(&self, user: u32, item: u32) -> bool {
        self.positives[user as usize].binary_search(&item).is_ok()
    }

    pub fn num_negatives(&self, user: u32) -> usize {
        self.num_items - self.positives[user as usize].len()
    }

    /// Items the user has not interacted with, ascending.
    pub fn negatives(&self, user: u32) -> impl Iterator<Item = u32> + '_ {
        let pos = &self.positives[user as usize];
        let mut cursor = 0usize;
        (0..self.num_items as u32).filter(move |&i| {
            while cursor < pos.len() && pos[cursor] < i {
                cursor += 1;
            }
            !(cursor < pos.len() && pos[cursor] == i)
        })
    }

    /// All `(user, item)` pairs in user-major, item-ascending order.
    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.positives
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u as u32, i)))
    }

    /// Per-user union of two sets over the same id space.
    pub fn union(&self, other: &InteractionSet) -> Result<InteractionSet> {
        if self.num_users != other.num_users || self.num_items != other.num_items {
            return Err(Error::Shape("union of sets with different id spaces".into()));
        }
        let positives = self
            .positives
            .iter()
            .zip(&other.positives)
            .map(|(a, b)| {
                let mut merged = Vec::with_capacity(a.len() + b.len());
                merged.extend_from_slice(a);
                merged.extend_from_slice(b);
                merged.sort_unstable();
                merged.dedup();
                merged
            })
            .collect();
        InteractionSet::new(self.num_users, self.num_items, positives)
    }
}

/// Bidirectional map between opaque keys and contiguous ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    keys: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Vocabulary whose keys are the decimal ids themselves.
    pub fn identity(n: usize) -> Self {
        let mut v = Vocab::new();
        for i in 0..n {
            v.intern(&i.to_string());
        }
        v
    }

    /// Returns the id of `key`, assigning the next id on first sight.
    pub fn intern(&mut self, key: &str) -> u32 {
        if let Some(&id) = self.index.get(key) {
            return id;
        }
        let id = self.keys.len() as u32;
        self.keys.push(key.to_owned());
        self.index.insert(key.to_owned(), id);
        id
    }

    pub fn get(&self, key: &str) -> Option<u32> {
        self.index.get(key).copied()
    }

    pub fn key(&self, id: u32) -> &str {
        &self.keys[id as usize]
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// A filtered interaction set together with the vocabularies that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub set: InteractionSet,
    pub users: Vocab,
    pub items: Vocab,
}

impl Corpus {
    /// Wraps a synthetic set with identity vocabularies.
    pub fn from_set(set: InteractionSet) -> Self {
        Corpus {
            users: Vocab::identity(set.num_users()),
            items: Vocab::identity(set.num_items()),
            set,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: InteractionSet,
    pub validation: InteractionSet,
    pub test: InteractionSet,
    pub users: Vocab,
    pub items: Vocab,
}

impl DatasetSplit {
    pub fn num_users(&self) -> usize {
        self.train.num_users()
    }

    pub fn num_items(&self) -> usize {
        self.train.num_items()
    }

    /// Everything the model should not be rewarded for ranking when evaluating
    /// the given target: train for validation, train plus validation for test.
    pub fn mask_for(&self, target: EvalTarget) -> Result<InteractionSet> {
        match target {
            EvalTarget::Validation => Ok(self.train.clone()),
            EvalTarget::Test => self.train.union(&self.validation),
        }
    }

    /// Copy of the split whose training set carries false-positive noise.
    ///
    /// Flipped items are never taken from validation or test, so held-out
    /// positives cannot leak into training.
    pub fn with_train_noise(&self, ratio: f64, seed: u64) -> Result<(DatasetSplit, NoiseReport)> {
        let held_out = self.validation.union(&self.test)?;
        let (train, report) = inject_false_positives_avoiding(&self.train, &held_out, ratio, seed)?;
        Ok((DatasetSplit { train, ..self.clone() }, report))
    }

    pub fn target(&self, target: EvalTarget) -> &InteractionSet {
        match target {
            EvalTarget::Validation => &self.validation,
            EvalTarget::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTarget {
    Validation,
    Test,
}
