//! Seeded synthetic corpora with planted topics.
//!
//! Every document belongs to one topic. Its tokens come from the topic's
//! private vocabulary with probability `separability` and from a shared
//! vocabulary otherwise, both Zipf-distributed. A goal is positive for the
//! documents of its positive topics. A fixed fraction of each topic carries
//! original labels (optionally flipped by label noise); the rest is
//! unlabeled, with the truth kept aside.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::corpus::{Corpus, Document, LabelState};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Number of documents in each topic; its length is the topic count.
    pub docs_per_topic: Vec<usize>,
    pub private_vocab: usize,
    pub shared_vocab: usize,
    /// Inclusive token-count range of a document.
    pub doc_len: (usize, usize),
    pub labeled_fraction: f64,
    /// Goal id to the topics that are positive for it.
    pub positive_topics: BTreeMap<String, Vec<usize>>,
    pub noise_rate: f64,
    pub separability: f64,
    pub seed: u64,
}

pub const PRESETS: [&str; 3] = ["sep2", "sep2-imbalanced", "sep5-noisy"];

impl SyntheticSpec {
    /// Named configurations:
    ///
    /// - `sep2`: two topics of 500 documents, separability 0.8, 10% labeled,
    ///   no label noise; goal `g1` is topic 0.
    /// - `sep2-imbalanced`: as `sep2` but the positive topic holds 5% of the
    ///   1000 documents.
    /// - `sep5-noisy`: five topics of 200, separability 0.6, 10% labeled and
    ///   10% label noise; goal `g1` is topic 0, `g2` topics 1 and 2.
    pub fn preset(name: &str) -> Option<SyntheticSpec> {
        let base = SyntheticSpec {
            docs_per_topic: vec![500, 500],
            private_vocab: 150,
            shared_vocab: 300,
            doc_len: (30, 60),
            labeled_fraction: 0.1,
            positive_topics: BTreeMap::from([("g1".to_string(), vec![0])]),
            noise_rate: 0.0,
            separability: 0.8,
            seed: 42,
        };
        match name {
            "sep2" => Some(base),
            "sep2-imbalanced" => Some(SyntheticSpec {
                docs_per_topic: vec![50, 950],
                ..base
            }),
            "sep5-noisy" => Some(SyntheticSpec {
                docs_per_topic: vec![200; 5],
                separability: 0.6,
                noise_rate: 0.1,
                positive_topics: BTreeMap::from([
                    ("g1".to_string(), vec![0]),
                    ("g2".to_string(), vec![1, 2]),
                ]),
                ..base
            }),
            _ => None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn topics(&self) -> usize {
        self.docs_per_topic.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.docs_per_topic.is_empty() || self.docs_per_topic.contains(&0) {
            return bad("every topic needs at least one document".into());
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return bad(format!(
                "labeled_fraction must lie in (0, 1], got {}",
                self.labeled_fraction
            ));
        }
        if !(0.0..0.5).contains(&self.noise_rate) {
            return bad(format!(
                "noise_rate must lie in [0, 0.5), got {}",
                self.noise_rate
            ));
        }
        if !(self.separability > 0.0 && self.separability <= 1.0) {
            return bad(format!(
                "separability must lie in (0, 1], got {}",
                self.separability
            ));
        }
        if self.private_vocab == 0 || (self.separability < 1.0 && self.shared_vocab == 0) {
            return bad("vocabularies must be nonempty".into());
        }
        if self.doc_len.0 == 0 || self.doc_len.0 > self.doc_len.1 {
            return bad(format!("invalid doc_len range {:?}", self.doc_len));
        }
        for (goal, topics) in &self.positive_topics {
            if topics.iter().any(|&t| t >= self.topics()) {
                return bad(format!(
                    "goal {goal:?} names a topic outside 0..{}",
                    self.topics()
                ));
            }
        }
        Ok(())
    }
}

/// Hidden truth for one generated document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocTruth {
    pub topic: usize,
    pub labels: BTreeMap<String, u8>,
}

pub type GroundTruth = BTreeMap<String, DocTruth>;

/// Lowercase letter code of fixed width, so generated words survive cleaning.
fn letters(mut n: usize, width: usize) -> String {
    let mut out = vec![b'a'; width];
    for slot in out.iter_mut().rev() {
        *slot = b'a' + (n % 26) as u8;
        n /= 26;
    }
    String::from_utf8(out).expect("ascii")
}

fn word_width(n: usize) -> usize {
    let mut width = 1;
    while 26usize.pow(width as u32) < n {
        width += 1;
    }
    width
}

struct Zipf {
    cumulative: Vec<f64>,
}

impl Zipf {
    fn new(n: usize) -> Self {
        let mut acc = 0.0;
        let cumulative = (1..=n)
            .map(|r| {
                acc += 1.0 / r as f64;
                acc
            })
            .collect();
        Zipf { cumulative }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let u = rng.random::<f64>() * self.cumulative.last().unwrap();
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

/// Generates the corpus and its ground truth. Document ids are `doc00000`,
/// `doc00001`, ... with topics shuffled over ids.
pub fn generate(spec: &SyntheticSpec) -> Result<(Corpus, GroundTruth)> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let total: usize = spec.docs_per_topic.iter().sum();

    let mut topic_of: Vec<usize> = spec
        .docs_per_topic
        .iter()
        .enumerate()
        .flat_map(|(t, &n)| std::iter::repeat_n(t, n))
        .collect();
    topic_of.shuffle(&mut rng);

    // Exactly round(fraction * size) labeled documents per topic.
    let mut labeled = vec![false; total];
    for topic in 0..spec.topics() {
        let mut members: Vec<usize> = (0..total).filter(|&i| topic_of[i] == topic).collect();
        members.shuffle(&mut rng);
        let n = (spec.labeled_fraction * members.len() as f64).round() as usize;
        for &i in members.iter().take(n) {
            labeled[i] = true;
        }
    }

    let private_zipf = Zipf::new(spec.private_vocab);
    let shared_zipf = Zipf::new(spec.shared_vocab.max(1));
    let topic_width = word_width(spec.topics());
    let private_width = word_width(spec.private_vocab);
    let shared_width = word_width(spec.shared_vocab.max(1));

    let width = total.to_string().len().max(5);
    let mut documents = Vec::with_capacity(total);
    let mut truth = GroundTruth::new();
    for (i, &topic) in topic_of.iter().enumerate() {
        let id = format!("doc{i:0width$}");
        let len = rng.random_range(spec.doc_len.0..=spec.doc_len.1);
        let words: Vec<String> = (0..len)
            .map(|_| {
                if rng.random::<f64>() < spec.separability {
                    format!(
                        "p{}{}",
                        letters(topic, topic_width),
                        letters(private_zipf.sample(&mut rng), private_width)
                    )
                } else {
                    format!("s{}", letters(shared_zipf.sample(&mut rng), shared_width))
                }
            })
            .collect();

        let mut labels = BTreeMap::new();
        let mut true_labels = BTreeMap::new();
        for (goal, topics) in &spec.positive_topics {
            let value = topics.contains(&topic);
            true_labels.insert(goal.clone(), u8::from(value));
            let flip = rng.random::<f64>() < spec.noise_rate;
            let state = if labeled[i] {
                LabelState::Original(value ^ flip)
            } else {
                LabelState::Unlabeled
            };
            labels.insert(goal.clone(), state);
        }
        documents.push(Document::new(id.clone(), words.join(" "), labels));
        truth.insert(
            id,
            DocTruth {
                topic,
                labels: true_labels,
            },
        );
    }
    let corpus = Corpus::new(documents, spec.positive_topics.keys().cloned().collect())?;
    Ok((corpus, truth))
}

/// Writes `corpus.jsonl` and `truth.json` into `dir`.
pub fn write_generated(dir: &Path, corpus: &Corpus, truth: &GroundTruth) -> Result<()> {
    artifact::create_dir(dir)?;
    corpus.write_jsonl(&dir.join("corpus.jsonl"))?;
    artifact::write_json(&dir.join("truth.json"), truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sep2_arithmetic() {
        let (c, truth) = generate(&SyntheticSpec::preset("sep2").unwrap()).unwrap();
        let counts = c.label_counts("g1");
        assert_eq!(counts.original_0 + counts.original_1, 100);
        assert_eq!(counts.unlabeled, 900);
        assert_eq!((counts.original_0, counts.original_1), (50, 50));
        let positives = truth.values().filter(|t| t.labels["g1"] == 1).count();
        assert_eq!(positives, 500);
    }

    #[test]
    fn imbalanced_preset_has_five_percent_positives() {
        let (c, _) = generate(&SyntheticSpec::preset("sep2-imbalanced").unwrap()).unwrap();
        let counts = c.label_counts("g1");
        assert_eq!((counts.original_1, counts.original_0), (5, 95));
    }

    #[test]
    fn regeneration_is_byte_identical() {
        for name in PRESETS {
            let spec = SyntheticSpec::preset(name).unwrap();
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a.0.to_jsonl(), b.0.to_jsonl());
            assert_eq!(a.1, b.1);
            let c = generate(&spec.clone().with_seed(spec.seed + 1)).unwrap();
            assert_ne!(a.0.to_jsonl(), c.0.to_jsonl());
        }
    }

    #[test]
    fn labels_only_on_the_labeled_fraction_and_noise_flips_some() {
        let spec = SyntheticSpec::preset("sep5-noisy").unwrap();
        let (c, truth) = generate(&spec).unwrap();
        for goal in ["g1", "g2"] {
            let counts = c.label_counts(goal);
            assert_eq!(counts.original_0 + counts.original_1, 100);
        }
        let flipped = c
            .documents()
            .iter()
            .filter_map(|d| {
                d.label("g1")
                    .original()
                    .map(|v| u8::from(v) != truth[&d.id].labels["g1"])
            })
            .filter(|&f| f)
            .count();
        assert!(flipped > 0 && flipped < 30, "{flipped} flips");
    }

    #[test]
    fn generated_words_survive_cleaning() {
        let (c, _) = generate(&SyntheticSpec::preset("sep2").unwrap()).unwrap();
        for doc in c.documents().iter().take(20) {
            assert_eq!(doc.clean_text, doc.raw_text);
        }
    }

    #[test]
    fn invalid_specs() {
        let base = SyntheticSpec::preset("sep2").unwrap();
        for bad in [
            SyntheticSpec {
                labeled_fraction: 0.0,
                ..base.clone()
            },
            SyntheticSpec {
                noise_rate: 0.5,
                ..base.clone()
            },
            SyntheticSpec {
                separability: 0.0,
                ..base.clone()
            },
            SyntheticSpec {
                docs_per_topic: vec![],
                ..base.clone()
            },
        ] {
            assert!(generate(&bad).is_err());
        }
    }
}
