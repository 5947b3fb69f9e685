use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Corpus, Document, LabelState, Split, SplitAssignment};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpsampleConfig {
    pub target_positive_fraction: f64,
    pub max_replicas: usize,
}

impl Default for UpsampleConfig {
    fn default() -> Self {
        UpsampleConfig {
            target_positive_fraction: 0.20,
            max_replicas: 5,
        }
    }
}

impl UpsampleConfig {
    pub fn validate(&self) -> Result<()> {
        let t = self.target_positive_fraction;
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "target_positive_fraction must lie in (0, 1), got {t}"
            )));
        }
        Ok(())
    }
}

fn replica_id(id: &str, counter: usize) -> String {
    format!("{id}~r{counter}")
}

/// Duplicates positive training-split documents for `goal` until positives
/// make up `target_positive_fraction` of the labeled training documents, or
/// every positive has been copied `max_replicas` times.
///
/// Copies are taken round-robin over the positives in id order. Each copy
/// carries only the goal's label and points back at its source through
/// `replica_of`, so it can never be assigned to validation or test.
pub fn upsample(
    corpus: &Corpus,
    goal: &str,
    split: &SplitAssignment,
    config: &UpsampleConfig,
) -> Result<Corpus> {
    config.validate()?;
    let mut positives: Vec<&Document> = Vec::new();
    let mut labeled = 0usize;
    let mut existing_pos = 0usize;
    for doc in corpus.documents() {
        if split.split_of(doc) != Some(Split::Train) {
            continue;
        }
        match doc.label(goal).original() {
            Some(true) => {
                labeled += 1;
                existing_pos += 1;
                if !doc.is_replica() {
                    positives.push(doc);
                }
            }
            Some(false) => labeled += 1,
            None => {}
        }
    }
    if positives.is_empty() {
        return Err(Error::NoPositivesToUpsample(goal.to_string()));
    }
    positives.sort_by(|a, b| a.id.cmp(&b.id));

    let target = config.target_positive_fraction;
    let cap = positives.len() * config.max_replicas;
    let mut out = corpus.clone();
    let mut added = 0usize;
    while ((existing_pos + added) as f64) < target * (labeled + added) as f64 && added < cap {
        let source = positives[added % positives.len()];
        let counter = added / positives.len() + 1;
        let copy = Document {
            id: replica_id(&source.id, counter),
            raw_text: source.raw_text.clone(),
            clean_text: source.clean_text.clone(),
            labels: BTreeMap::from([(goal.to_string(), LabelState::Original(true))]),
            replica_of: Some(source.id.clone()),
        };
        out.push(copy)?;
        added += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train_corpus(pos: usize, neg: usize) -> (Corpus, SplitAssignment) {
        let mut docs = Vec::new();
        let mut assignment = BTreeMap::new();
        for i in 0..pos + neg {
            let id = format!("d{i:03}");
            docs.push(Document::new(
                id.clone(),
                "text",
                BTreeMap::from([("g".to_string(), LabelState::Original(i < pos))]),
            ));
            assignment.insert(id, Split::Train);
        }
        // One held-out document of each kind.
        for (id, split) in [("v0", Split::Validation), ("t0", Split::Test)] {
            docs.push(Document::new(
                id,
                "text",
                BTreeMap::from([("g".to_string(), LabelState::Original(true))]),
            ));
            assignment.insert(id.to_string(), split);
        }
        let split = SplitAssignment {
            seed: 0,
            goal: "g".into(),
            assignment,
        };
        (Corpus::new(docs, vec!["g".into()]).unwrap(), split)
    }

    fn smallest_duplicate_count(pos: usize, neg: usize, target: f64, cap: usize) -> usize {
        (0..=cap)
            .find(|&d| (pos + d) as f64 / (pos + neg + d) as f64 >= target)
            .unwrap_or(cap)
    }

    #[test]
    fn one_positive_needs_two_copies() {
        let (c, s) = train_corpus(1, 9);
        let cfg = UpsampleConfig {
            target_positive_fraction: 0.25,
            max_replicas: 10,
        };
        let out = upsample(&c, "g", &s, &cfg).unwrap();
        assert_eq!(smallest_duplicate_count(1, 9, 0.25, 10), 2);
        assert_eq!(out.len(), c.len() + 2);
        let replicas: Vec<&Document> = out.documents().iter().filter(|d| d.is_replica()).collect();
        assert_eq!(replicas.len(), 2);
        assert_eq!(replicas[0].id, "d000~r1");
        assert_eq!(replicas[1].id, "d000~r2");
        assert!(replicas.iter().all(|r| s.split_of(r) == Some(Split::Train)));
    }

    #[test]
    fn already_balanced_is_unchanged() {
        let (c, s) = train_corpus(5, 5);
        let cfg = UpsampleConfig {
            target_positive_fraction: 0.25,
            ..Default::default()
        };
        assert_eq!(upsample(&c, "g", &s, &cfg).unwrap(), c);
    }

    #[test]
    fn zero_positives_is_an_error() {
        let (c, s) = train_corpus(0, 10);
        assert!(matches!(
            upsample(&c, "g", &s, &UpsampleConfig::default()),
            Err(Error::NoPositivesToUpsample(_))
        ));
    }

    #[test]
    fn replica_cap_is_respected() {
        let (c, s) = train_corpus(2, 100);
        let cfg = UpsampleConfig {
            target_positive_fraction: 0.5,
            max_replicas: 3,
        };
        let out = upsample(&c, "g", &s, &cfg).unwrap();
        assert_eq!(out.len() - c.len(), 6);
    }

    #[test]
    fn matches_brute_force_count_and_leaves_holdout_alone() {
        for pos in 1..6 {
            for neg in 0..40 {
                let (c, s) = train_corpus(pos, neg);
                let cfg = UpsampleConfig {
                    target_positive_fraction: 0.3,
                    max_replicas: 4,
                };
                let out = upsample(&c, "g", &s, &cfg).unwrap();
                assert_eq!(
                    out.len() - c.len(),
                    smallest_duplicate_count(pos, neg, 0.3, pos * 4)
                );
                for split in [Split::Validation, Split::Test] {
                    let before: Vec<_> = c
                        .documents()
                        .iter()
                        .filter(|d| s.split_of(d) == Some(split))
                        .collect();
                    let after: Vec<_> = out
                        .documents()
                        .iter()
                        .filter(|d| s.split_of(d) == Some(split))
                        .collect();
                    assert_eq!(before, after);
                }
                assert_eq!(c.original_label_digest(), out.original_label_digest());
            }
        }
    }

    #[test]
    fn invalid_target() {
        let (c, s) = train_corpus(1, 3);
        for t in [0.0, 1.0, -0.5] {
            let cfg = UpsampleConfig {
                target_positive_fraction: t,
                ..Default::default()
            };
            assert!(upsample(&c, "g", &s, &cfg).is_err());
        }
    }
}
