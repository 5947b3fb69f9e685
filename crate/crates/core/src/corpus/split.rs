use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Corpus, Document};
use crate::error::{Error, Result};
use crate::seed;

pub const MIN_LABELED_FOR_SPLIT: usize = 5;

/// Integer weights of the cluster-train / validation / test splits (60/20/20).
const SPLIT_WEIGHTS: [usize; 3] = [3, 1, 1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train")]
    Train,
    #[serde(rename = "val")]
    Validation,
    #[serde(rename = "test")]
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "val",
            Split::Test => "test",
        }
    }
}

/// Partition of a goal's originally labeled documents.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub seed: u64,
    pub goal: String,
    pub assignment: BTreeMap<String, Split>,
}

impl SplitAssignment {
    /// Split membership of a document. Upsampled replicas always belong to
    /// the training split; unlabeled documents have none.
    pub fn split_of(&self, doc: &Document) -> Option<Split> {
        if doc.is_replica() {
            return Some(Split::Train);
        }
        self.assignment.get(&doc.id).copied()
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.assignment
            .iter()
            .filter(move |(_, &s)| s == split)
            .map(|(id, _)| id.as_str())
    }

    pub fn count(&self, split: Split) -> usize {
        self.ids(split).count()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Largest-remainder apportionment of `total` items over the split weights.
/// Ties in the remainder go to the earlier split.
pub(crate) fn apportion(total: usize) -> [usize; 3] {
    let denom: usize = SPLIT_WEIGHTS.iter().sum();
    let mut sizes = SPLIT_WEIGHTS.map(|w| total * w / denom);
    let remainders = SPLIT_WEIGHTS.map(|w| total * w % denom);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| remainders[b].cmp(&remainders[a]).then(a.cmp(&b)));
    let leftover = total - sizes.iter().sum::<usize>();
    for &i in order.iter().take(leftover) {
        sizes[i] += 1;
    }
    sizes
}

/// Per-class allocation that sums to `class_total`. When the class has at
/// least one document per split, every split gets one.
fn apportion_class(class_total: usize) -> [usize; 3] {
    let mut sizes = apportion(class_total);
    if class_total >= sizes.len() {
        while let Some(empty) = sizes.iter().position(|&s| s == 0) {
            let donor = (0..sizes.len())
                .max_by_key(|&i| (sizes[i], usize::MAX - i))
                .unwrap();
            sizes[donor] -= 1;
            sizes[empty] += 1;
        }
    }
    sizes
}

/// Stratified 60/20/20 split of the documents originally labeled for `goal`.
///
/// Overall split sizes follow largest-remainder rounding of the labeled
/// count; positives are apportioned the same way and negatives fill the rest.
/// Replicas never take part.
pub fn split_labeled(corpus: &Corpus, goal: &str, seed: u64) -> Result<SplitAssignment> {
    corpus.require_goal(goal)?;
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for doc in corpus.documents().iter().filter(|d| !d.is_replica()) {
        match doc.label(goal).original() {
            Some(true) => positives.push(doc.id.clone()),
            Some(false) => negatives.push(doc.id.clone()),
            None => {}
        }
    }
    let total = positives.len() + negatives.len();
    if total < MIN_LABELED_FOR_SPLIT {
        return Err(Error::TooFewLabeled {
            goal: goal.to_string(),
            found: total,
            min: MIN_LABELED_FOR_SPLIT,
        });
    }

    let overall = apportion(total);
    let pos_sizes = apportion_class(positives.len());
    let neg_sizes = {
        let diff: Option<Vec<usize>> = (0..3)
            .map(|i| overall[i].checked_sub(pos_sizes[i]))
            .collect();
        match diff {
            Some(d) => [d[0], d[1], d[2]],
            None => apportion_class(negatives.len()),
        }
    };

    positives.sort();
    negatives.sort();
    let mut rng = seed::rng(seed);
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);

    let mut assignment = BTreeMap::new();
    for (ids, sizes) in [(positives, pos_sizes), (negatives, neg_sizes)] {
        let mut ids = ids.into_iter();
        for (split, size) in Split::ALL.into_iter().zip(sizes) {
            for id in ids.by_ref().take(size) {
                assignment.insert(id, split);
            }
        }
    }
    Ok(SplitAssignment {
        seed,
        goal: goal.to_string(),
        assignment,
    })
}
