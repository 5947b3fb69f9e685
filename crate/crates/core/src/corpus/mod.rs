//! Documents, per-goal tri-state labels, and the JSON-lines corpus format.
//!
//! A corpus line looks like
//!
//! ```text
//! {"id": "a", "text": "Ação Nº 123", "labels": {"sdg3": 1, "sdg9": null}}
//! ```
//!
//! An absent goal key is equivalent to `null` (unlabeled). Augmented corpora
//! are written with an extra `provenance` map (`"original"` / `"synthetic"`)
//! and, for upsampled duplicates, a `replica_of` field naming the source
//! document.

mod clean;
mod split;
mod upsample;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use clean::clean_text;
pub use split::{split_labeled, Split, SplitAssignment, MIN_LABELED_FOR_SPLIT};
pub use upsample::{upsample, UpsampleConfig};

/// Label of one document for one goal.
///
/// Synthetic values can only exist where the original state is unlabeled, so
/// the provenance is folded into the variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum LabelState {
    #[default]
    Unlabeled,
    Original(bool),
    Synthetic(bool),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Synthetic,
}

impl LabelState {
    /// The label value regardless of provenance.
    pub fn value(self) -> Option<bool> {
        match self {
            LabelState::Unlabeled => None,
            LabelState::Original(v) | LabelState::Synthetic(v) => Some(v),
        }
    }

    pub fn original(self) -> Option<bool> {
        match self {
            LabelState::Original(v) => Some(v),
            _ => None,
        }
    }

    pub fn synthetic(self) -> Option<bool> {
        match self {
            LabelState::Synthetic(v) => Some(v),
            _ => None,
        }
    }

    pub fn provenance(self) -> Option<Provenance> {
        match self {
            LabelState::Unlabeled => None,
            LabelState::Original(_) => Some(Provenance::Original),
            LabelState::Synthetic(_) => Some(Provenance::Synthetic),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub id: String,
    pub raw_text: String,
    pub clean_text: String,
    pub labels: BTreeMap<String, LabelState>,
    /// Set on upsampled duplicates; names the document they copy.
    pub replica_of: Option<String>,
}

impl Document {
    pub fn new(
        id: impl Into<String>,
        raw_text: impl Into<String>,
        labels: BTreeMap<String, LabelState>,
    ) -> Self {
        let raw_text = raw_text.into();
        Document {
            id: id.into(),
            clean_text: clean_text(&raw_text),
            raw_text,
            labels,
            replica_of: None,
        }
    }

    pub fn label(&self, goal: &str) -> LabelState {
        self.labels.get(goal).copied().unwrap_or_default()
    }

    pub fn is_replica(&self) -> bool {
        self.replica_of.is_some()
    }

    /// The id whose embedding this document shares: the source for replicas,
    /// itself otherwise.
    pub fn embedding_id(&self) -> &str {
        self.replica_of.as_deref().unwrap_or(&self.id)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.clean_text.split_whitespace()
    }
}

/// Per-goal label tally.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub original_0: usize,
    pub original_1: usize,
    pub synthetic_0: usize,
    pub synthetic_1: usize,
    pub unlabeled: usize,
    /// Documents with an original label that are upsampled duplicates.
    pub replicas: usize,
}

impl LabelCounts {
    pub fn total_0(&self) -> usize {
        self.original_0 + self.synthetic_0
    }

    pub fn total_1(&self) -> usize {
        self.original_1 + self.synthetic_1
    }

    pub fn total_labeled(&self) -> usize {
        self.total_0() + self.total_1()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    goals: Vec<String>,
    index: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus, checking id uniqueness. Goals named in any label map
    /// are added to `goals` if missing.
    pub fn new(documents: Vec<Document>, goals: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if index.insert(doc.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(doc.id.clone()));
            }
        }
        let mut goal_set: BTreeSet<String> = goals.into_iter().collect();
        for doc in &documents {
            goal_set.extend(doc.labels.keys().cloned());
        }
        Ok(Corpus {
            documents,
            goals: goal_set.into_iter().collect(),
            index,
        })
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn goals(&self) -> &[String] {
        &self.goals
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Document> {
        self.index.get(id).map(|&i| &self.documents[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn require_goal(&self, goal: &str) -> Result<()> {
        if self.goals.iter().any(|g| g == goal) {
            Ok(())
        } else {
            Err(Error::MissingGoal(goal.to_string()))
        }
    }

    pub fn label_counts(&self, goal: &str) -> LabelCounts {
        let mut counts = LabelCounts::default();
        for doc in &self.documents {
            match doc.label(goal) {
                LabelState::Unlabeled => counts.unlabeled += 1,
                LabelState::Original(v) => {
                    if v {
                        counts.original_1 += 1;
                    } else {
                        counts.original_0 += 1;
                    }
                    if doc.is_replica() {
                        counts.replicas += 1;
                    }
                }
                LabelState::Synthetic(true) => counts.synthetic_1 += 1,
                LabelState::Synthetic(false) => counts.synthetic_0 += 1,
            }
        }
        counts
    }

    /// Concatenates two corpora (e.g. the labeled and unlabeled inputs).
    pub fn merge(self, other: Corpus) -> Result<Corpus> {
        let mut goals = self.goals;
        goals.extend(other.goals);
        let mut documents = self.documents;
        documents.extend(other.documents);
        Corpus::new(documents, goals)
    }

    pub(crate) fn push(&mut self, doc: Document) -> Result<()> {
        if self.index.contains_key(&doc.id) {
            return Err(Error::DuplicateId(doc.id));
        }
        for goal in doc.labels.keys() {
            if !self.goals.contains(goal) {
                self.goals.push(goal.clone());
                self.goals.sort();
            }
        }
        self.index.insert(doc.id.clone(), self.documents.len());
        self.documents.push(doc);
        Ok(())
    }

    /// Returns a copy with synthetic labels attached for `goal`.
    ///
    /// Fails if an assignment targets a document with an original label for
    /// the goal or an unknown id.
    pub fn with_synthetic_labels(
        &self,
        goal: &str,
        assignments: &BTreeMap<String, bool>,
    ) -> Result<Corpus> {
        let mut out = self.clone();
        if !out.goals.iter().any(|g| g == goal) {
            out.goals.push(goal.to_string());
            out.goals.sort();
        }
        for (id, &value) in assignments {
            let &i = out
                .index
                .get(id)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown document {id:?}")))?;
            let doc = &mut out.documents[i];
            if doc.label(goal).original().is_some() {
                return Err(Error::InvalidParameter(format!(
                    "document {id:?} already has an original label for {goal:?}"
                )));
            }
            doc.labels
                .insert(goal.to_string(), LabelState::Synthetic(value));
        }
        Ok(out)
    }

    /// SHA-256 over every original label, in id order. Synthetic labels and
    /// replicas do not contribute, so the digest is stable across
    /// augmentation.
    pub fn original_label_digest(&self) -> String {
        let mut entries: Vec<(&str, &str, bool)> = Vec::new();
        for doc in self.documents.iter().filter(|d| !d.is_replica()) {
            for (goal, state) in &doc.labels {
                if let Some(v) = state.original() {
                    entries.push((&doc.id, goal, v));
                }
            }
        }
        entries.sort_unstable();
        let mut hasher = Sha256::new();
        for (id, goal, v) in entries {
            hasher.update(id.as_bytes());
            hasher.update([0]);
            hasher.update(goal.as_bytes());
            hasher.update([0, v as u8]);
        }
        hex::encode(hasher.finalize())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            out.push_str(&serde_json::to_string(&Record::from(doc)).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(self.to_jsonl().as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// When set, label keys outside this list are rejected.
    pub allowed_goals: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    text: String,
    #[serde(default)]
    labels: BTreeMap<String, Option<u8>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    provenance: BTreeMap<String, Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    replica_of: Option<String>,
}

impl From<&Document> for Record {
    fn from(doc: &Document) -> Self {
        let mut labels = BTreeMap::new();
        let mut provenance = BTreeMap::new();
        let mut any_synthetic = false;
        for (goal, state) in &doc.labels {
            labels.insert(goal.clone(), state.value().map(u8::from));
            if let Some(p) = state.provenance() {
                any_synthetic |= p == Provenance::Synthetic;
                provenance.insert(goal.clone(), p);
            }
        }
        if !any_synthetic {
            provenance.clear();
        }
        Record {
            id: doc.id.clone(),
            text: doc.raw_text.clone(),
            labels,
            provenance,
            replica_of: doc.replica_of.clone(),
        }
    }
}

fn parse_record(line_no: usize, line: &str, opts: &LoadOptions) -> Result<Document> {
    let record: Record = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
        line: line_no,
        message: e.to_string(),
    })?;
    let mut labels = BTreeMap::new();
    for (goal, value) in record.labels {
        if let Some(allowed) = &opts.allowed_goals {
            if !allowed.contains(&goal) {
                return Err(Error::UnknownGoal {
                    line: line_no,
                    goal,
                });
            }
        }
        let value = match value {
            None => None,
            Some(0) => Some(false),
            Some(1) => Some(true),
            Some(other) => {
                return Err(Error::MalformedLine {
                    line: line_no,
                    message: format!("label for {goal:?} must be 0, 1 or null, got {other}"),
                })
            }
        };
        let state = match (value, record.provenance.get(&goal)) {
            (None, _) => LabelState::Unlabeled,
            (Some(v), Some(Provenance::Synthetic)) => LabelState::Synthetic(v),
            (Some(v), _) => LabelState::Original(v),
        };
        labels.insert(goal, state);
    }
    let mut doc = Document::new(record.id, record.text, labels);
    doc.replica_of = record.replica_of;
    Ok(doc)
}

pub fn parse_jsonl(reader: impl BufRead, opts: &LoadOptions) -> Result<Corpus> {
    let mut documents = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::MalformedLine {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_record(line_no, &line, opts)?;
        if seen.insert(doc.id.clone(), line_no).is_some() {
            return Err(Error::DuplicateId(doc.id));
        }
        documents.push(doc);
    }
    Corpus::new(documents, opts.allowed_goals.clone().unwrap_or_default())
}

pub fn load_corpus(path: &Path, opts: &LoadOptions) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(BufReader::new(file), opts)
}
