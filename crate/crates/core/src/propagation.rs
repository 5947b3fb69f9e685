//! Neighborhood selection and threshold label propagation.
//!
//! For each cluster, the closest `radius_pct`% of members (by rank, at least
//! one) form the neighborhood. If the share of positives among its labeled
//! members is at least `threshold_pct`%, every unlabeled member receives a
//! synthetic 1; otherwise a synthetic 0. Neighborhoods without labeled
//! members are skipped.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans_fit, ClusterModel, KMeansConfig};
use crate::corpus::{Corpus, Document, LabelCounts, Split, SplitAssignment};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationParams {
    pub clusters: usize,
    pub radius_pct: f64,
    pub threshold_pct: f64,
}

impl PropagationParams {
    pub fn new(clusters: usize, radius_pct: f64, threshold_pct: f64) -> Result<Self> {
        let p = PropagationParams {
            clusters,
            radius_pct,
            threshold_pct,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.clusters < 2 {
            return Err(Error::InvalidParameter(format!(
                "cluster count must be >= 2, got {}",
                self.clusters
            )));
        }
        if !(self.radius_pct > 0.0 && self.radius_pct <= 100.0) {
            return Err(Error::InvalidParameter(format!(
                "radius must lie in (0, 100], got {}",
                self.radius_pct
            )));
        }
        if !(self.threshold_pct > 0.0 && self.threshold_pct < 100.0) {
            return Err(Error::InvalidParameter(format!(
                "threshold must lie in (0, 100), got {}",
                self.threshold_pct
            )));
        }
        Ok(())
    }
}

/// Labels visible to propagation for one goal: `Some(v)` for documents whose
/// original label takes part, `None` for unlabeled or masked ones.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelView {
    labels: HashMap<String, Option<bool>>,
}

impl LabelView {
    pub fn get(&self, id: &str) -> Option<bool> {
        self.labels.get(id).copied().flatten()
    }

    pub fn insert(&mut self, id: impl Into<String>, label: Option<bool>) {
        self.labels.insert(id.into(), label);
    }
}

impl FromIterator<(String, Option<bool>)> for LabelView {
    fn from_iter<I: IntoIterator<Item = (String, Option<bool>)>>(iter: I) -> Self {
        LabelView {
            labels: iter.into_iter().collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    pub cluster: usize,
    pub cluster_size: usize,
    /// Retained members in rank order with their visible label.
    pub members: Vec<(String, Option<bool>)>,
    pub positives: usize,
    pub negatives: usize,
    pub unlabeled: usize,
}

/// `max(1, floor(size * radius_pct / 100))`, capped at `size`.
pub fn retained_count(cluster_size: usize, radius_pct: f64) -> usize {
    let raw = (cluster_size as f64 * radius_pct / 100.0).floor() as usize;
    raw.clamp(1, cluster_size.max(1))
}

pub fn select_neighborhood(
    model: &ClusterModel,
    cluster: usize,
    radius_pct: f64,
    labels: &LabelView,
) -> Neighborhood {
    let ranked = model.rank_by_centroid_distance(cluster);
    let keep = retained_count(ranked.len(), radius_pct);
    let members: Vec<(String, Option<bool>)> = ranked
        .iter()
        .take(keep)
        .map(|id| (id.to_string(), labels.get(id)))
        .collect();
    let positives = members.iter().filter(|m| m.1 == Some(true)).count();
    let negatives = members.iter().filter(|m| m.1 == Some(false)).count();
    Neighborhood {
        cluster,
        cluster_size: ranked.len(),
        unlabeled: members.len() - positives - negatives,
        members,
        positives,
        negatives,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "propagate_1")]
    Propagate1,
    #[serde(rename = "propagate_0")]
    Propagate0,
    #[serde(rename = "skip")]
    Skip,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NeighborhoodOutcome {
    pub cluster: usize,
    pub cluster_size: usize,
    pub retained: usize,
    pub positive_proportion: Option<f64>,
    pub decision: Decision,
    pub assigned: Vec<(String, bool)>,
}

/// Applies the inclusive threshold rule to one neighborhood.
pub fn propagate(nbhd: &Neighborhood, threshold_pct: f64) -> NeighborhoodOutcome {
    let labeled = nbhd.positives + nbhd.negatives;
    let (proportion, decision) = if labeled == 0 {
        (None, Decision::Skip)
    } else {
        let p = nbhd.positives as f64 / labeled as f64;
        // Compared as positives * 100 >= threshold * labeled to keep the
        // boundary exact for integer thresholds.
        let positive = nbhd.positives as f64 * 100.0 >= threshold_pct * labeled as f64;
        (
            Some(p),
            if positive {
                Decision::Propagate1
            } else {
                Decision::Propagate0
            },
        )
    };
    let assigned = match decision {
        Decision::Skip => Vec::new(),
        d => nbhd
            .members
            .iter()
            .filter(|m| m.1.is_none())
            .map(|m| (m.0.clone(), d == Decision::Propagate1))
            .collect(),
    };
    NeighborhoodOutcome {
        cluster: nbhd.cluster,
        cluster_size: nbhd.cluster_size,
        retained: nbhd.members.len(),
        positive_proportion: proportion,
        decision,
        assigned,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PropagationOutcome {
    pub neighborhoods: Vec<NeighborhoodOutcome>,
    pub assignments: BTreeMap<String, bool>,
}

/// Runs selection and propagation over every cluster of a fitted model.
pub fn propagate_all(
    model: &ClusterModel,
    labels: &LabelView,
    radius_pct: f64,
    threshold_pct: f64,
) -> PropagationOutcome {
    let mut neighborhoods = Vec::with_capacity(model.k);
    let mut assignments = BTreeMap::new();
    for cluster in 0..model.k {
        let nbhd = select_neighborhood(model, cluster, radius_pct, labels);
        let outcome = propagate(&nbhd, threshold_pct);
        for (id, v) in &outcome.assigned {
            let previous = assignments.insert(id.clone(), *v);
            debug_assert!(
                previous.is_none(),
                "hard assignment gives each document one cluster"
            );
        }
        neighborhoods.push(outcome);
    }
    PropagationOutcome {
        neighborhoods,
        assignments,
    }
}

/// Documents clustered for one goal, their points (rows sorted by id) and
/// the labels propagation may read.
#[derive(Clone, Debug)]
pub struct ClusteringInput<'a> {
    pub docs: Vec<&'a Document>,
    pub points: EmbeddingMatrix,
    pub labels: LabelView,
}

/// Collects the clustering input for `goal`: training-split labeled
/// documents (replicas included) and every document without an original
/// label. When `masked` names a held-out split, its documents join as
/// unlabeled; other held-out documents stay out. Documents with flagged
/// (zero) embeddings are left out.
pub fn clustering_input<'a>(
    corpus: &'a Corpus,
    embeddings: &EmbeddingMatrix,
    split: &SplitAssignment,
    goal: &str,
    masked: Option<Split>,
) -> Result<ClusteringInput<'a>> {
    let mut docs: Vec<&Document> = Vec::new();
    let mut labels = LabelView::default();
    for doc in corpus.documents() {
        if embeddings.is_flagged(doc.embedding_id()) {
            continue;
        }
        let original = doc.label(goal).original();
        let visible = match (original, split.split_of(doc)) {
            (None, _) => None,
            (Some(v), Some(Split::Train)) => Some(v),
            (Some(_), Some(s)) if Some(s) == masked => None,
            _ => continue,
        };
        docs.push(doc);
        labels.insert(doc.id.clone(), visible);
    }
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    let points = embeddings.gather(&docs)?;
    Ok(ClusteringInput {
        docs,
        points,
        labels,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub id: usize,
    pub size: usize,
    pub retained: usize,
    pub p: Option<f64>,
    pub decision: Decision,
    pub assigned: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PropagationTotals {
    pub synthetic_1: usize,
    pub synthetic_0: usize,
    /// Neighborhoods skipped for lack of labeled members.
    pub skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationReport {
    pub goal: String,
    pub params: PropagationParams,
    pub seed: u64,
    pub clusters: Vec<ClusterReport>,
    pub totals: PropagationTotals,
    /// Label tally of the input corpus.
    pub before: LabelCounts,
    /// Label tally of the augmented corpus.
    pub after: LabelCounts,
    pub warnings: Vec<String>,
}

impl AugmentationReport {
    /// Original counts unchanged and every label accounted for as original
    /// or synthetic.
    pub fn is_conserved(&self) -> bool {
        self.before.original_0 == self.after.original_0
            && self.before.original_1 == self.after.original_1
            && self.after.synthetic_0 == self.totals.synthetic_0
            && self.after.synthetic_1 == self.totals.synthetic_1
            && self.after.total_labeled()
                == self.before.original_0
                    + self.before.original_1
                    + self.totals.synthetic_0
                    + self.totals.synthetic_1
    }
}

/// Clusters the goal's clustering input, propagates, and returns the corpus
/// with synthetic labels on originally unlabeled documents.
pub fn augment(
    corpus: &Corpus,
    embeddings: &EmbeddingMatrix,
    split: &SplitAssignment,
    params: &PropagationParams,
    goal: &str,
    seed: u64,
    kmeans: &KMeansConfig,
) -> Result<(Corpus, AugmentationReport)> {
    params.validate()?;
    corpus.require_goal(goal)?;
    let input = clustering_input(corpus, embeddings, split, goal, None)?;
    let before = corpus.label_counts(goal);

    // Any synthetic labels from an earlier run are replaced, not stacked.
    let mut base = corpus.clone();
    if before.synthetic_0 + before.synthetic_1 > 0 {
        base = strip_synthetic(corpus, goal)?;
    }

    let unlabeled_in_input = input
        .docs
        .iter()
        .filter(|d| input.labels.get(&d.id).is_none())
        .count();
    let (outcome, clusters) = if unlabeled_in_input == 0 {
        (
            PropagationOutcome {
                neighborhoods: Vec::new(),
                assignments: BTreeMap::new(),
            },
            Vec::new(),
        )
    } else {
        let model = kmeans_fit(&input.points, params.clusters, seed, kmeans)?;
        let outcome = propagate_all(
            &model,
            &input.labels,
            params.radius_pct,
            params.threshold_pct,
        );
        let clusters = outcome
            .neighborhoods
            .iter()
            .map(|n| ClusterReport {
                id: n.cluster,
                size: n.cluster_size,
                retained: n.retained,
                p: n.positive_proportion,
                decision: n.decision,
                assigned: n.assigned.len(),
            })
            .collect();
        (outcome, clusters)
    };

    let augmented = base.with_synthetic_labels(goal, &outcome.assignments)?;
    let totals = PropagationTotals {
        synthetic_1: outcome.assignments.values().filter(|&&v| v).count(),
        synthetic_0: outcome.assignments.values().filter(|&&v| !v).count(),
        skipped: outcome
            .neighborhoods
            .iter()
            .filter(|n| n.decision == Decision::Skip)
            .count(),
    };
    let mut warnings = Vec::new();
    if totals.synthetic_1 == 0 {
        warnings.push(format!(
            "no positive labels were propagated for goal {goal:?}"
        ));
    }
    let report = AugmentationReport {
        goal: goal.to_string(),
        params: *params,
        seed,
        clusters,
        totals,
        before,
        after: augmented.label_counts(goal),
        warnings,
    };
    Ok((augmented, report))
}

fn strip_synthetic(corpus: &Corpus, goal: &str) -> Result<Corpus> {
    let docs = corpus
        .documents()
        .iter()
        .cloned()
        .map(|mut d| {
            if d.label(goal).synthetic().is_some() {
                d.labels
                    .insert(goal.to_string(), crate::corpus::LabelState::Unlabeled);
            }
            d
        })
        .collect();
    Corpus::new(docs, corpus.goals().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split_labeled, LabelState};
    use crate::embedding::{build_vocab, tfidf_embed};
    use crate::synthgen::{generate, SyntheticSpec};

    fn nbhd(labels: &[Option<bool>]) -> Neighborhood {
        let members: Vec<(String, Option<bool>)> = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| (format!("m{i}"), l))
            .collect();
        let positives = labels.iter().filter(|l| **l == Some(true)).count();
        let negatives = labels.iter().filter(|l| **l == Some(false)).count();
        Neighborhood {
            cluster: 0,
            cluster_size: labels.len(),
            unlabeled: labels.len() - positives - negatives,
            members,
            positives,
            negatives,
        }
    }

    #[test]
    fn retention_rule() {
        assert_eq!(retained_count(40, 10.0), 4);
        assert_eq!(retained_count(40, 100.0), 40);
        assert_eq!(retained_count(3, 5.0), 1);
        assert_eq!(retained_count(20, 5.0), 1);
        assert_eq!(retained_count(99, 25.0), 24);
    }

    #[test]
    fn majority_positive_neighborhood() {
        let out = propagate(
            &nbhd(&[Some(true), Some(true), Some(true), Some(false), None, None]),
            50.0,
        );
        assert_eq!(out.decision, Decision::Propagate1);
        assert_eq!(out.positive_proportion, Some(0.75));
        assert_eq!(
            out.assigned,
            vec![("m4".to_string(), true), ("m5".to_string(), true)]
        );
    }

    #[test]
    fn threshold_is_inclusive() {
        let out = propagate(
            &nbhd(&[Some(true), Some(true), Some(false), Some(false), None]),
            50.0,
        );
        assert_eq!(out.decision, Decision::Propagate1);
        assert_eq!(out.assigned, vec![("m4".to_string(), true)]);
        // 3 of 5 at 60%, 7 of 10 at 70%.
        let mut labels = vec![Some(true); 3];
        labels.extend([Some(false), Some(false), None]);
        assert_eq!(
            propagate(&nbhd(&labels), 60.0).decision,
            Decision::Propagate1
        );
        let mut labels = vec![Some(true); 7];
        labels.extend([Some(false); 3]);
        labels.push(None);
        assert_eq!(
            propagate(&nbhd(&labels), 70.0).decision,
            Decision::Propagate1
        );
        assert_eq!(
            propagate(&nbhd(&labels), 70.1).decision,
            Decision::Propagate0
        );
    }

    #[test]
    fn unlabeled_only_neighborhood_is_skipped() {
        let out = propagate(&nbhd(&[None, None, None, None]), 50.0);
        assert_eq!(out.decision, Decision::Skip);
        assert!(out.assigned.is_empty());
        assert_eq!(out.positive_proportion, None);
    }

    #[test]
    fn minority_positive_gets_zero() {
        let out = propagate(&nbhd(&[Some(true), Some(false), Some(false), None]), 50.0);
        assert_eq!(out.decision, Decision::Propagate0);
        assert_eq!(out.assigned, vec![("m3".to_string(), false)]);
    }

    #[test]
    fn threshold_monotonicity() {
        for pos in 0..8usize {
            for neg in 0..8usize {
                if pos + neg == 0 {
                    continue;
                }
                let mut labels = vec![Some(true); pos];
                labels.extend(vec![Some(false); neg]);
                labels.push(None);
                let n = nbhd(&labels);
                let mut seen_zero = false;
                for t in [10.0, 25.0, 50.0, 60.0, 70.0, 90.0] {
                    let d = propagate(&n, t).decision;
                    if seen_zero {
                        assert_eq!(d, Decision::Propagate0);
                    }
                    seen_zero |= d == Decision::Propagate0;
                }
            }
        }
    }

    fn sep2_setup() -> (Corpus, EmbeddingMatrix, SplitAssignment) {
        let (c, _) = generate(&SyntheticSpec::preset("sep2").unwrap()).unwrap();
        let v = build_vocab(&c, 2).unwrap();
        let e = tfidf_embed(&c, &v, None, 1).unwrap();
        let s = split_labeled(&c, "g1", 3).unwrap();
        (c, e, s)
    }

    #[test]
    fn radius_monotonicity() {
        let (c, e, s) = sep2_setup();
        let input = clustering_input(&c, &e, &s, "g1", None).unwrap();
        let model = kmeans_fit(&input.points, 5, 2, &KMeansConfig::default()).unwrap();
        for cluster in 0..model.k {
            let mut previous: Vec<String> = Vec::new();
            for r in [5.0, 10.0, 25.0, 100.0] {
                let members: Vec<String> = select_neighborhood(&model, cluster, r, &input.labels)
                    .members
                    .into_iter()
                    .map(|m| m.0)
                    .collect();
                assert!(previous.iter().all(|p| members.contains(p)));
                previous = members;
            }
            assert_eq!(previous.len(), model.cluster_size(cluster));
        }
    }

    #[test]
    fn clustering_input_respects_splits() {
        let (c, e, s) = sep2_setup();
        let input = clustering_input(&c, &e, &s, "g1", None).unwrap();
        assert_eq!(input.docs.len(), 900 + s.count(Split::Train));
        let masked = clustering_input(&c, &e, &s, "g1", Some(Split::Validation)).unwrap();
        assert_eq!(
            masked.docs.len(),
            900 + s.count(Split::Train) + s.count(Split::Validation)
        );
        for id in s.ids(Split::Validation) {
            assert_eq!(masked.labels.get(id), None);
        }
        assert!(input.docs.windows(2).all(|w| w[0].id < w[1].id));
    }

    #[test]
    fn two_topic_corpus_propagates_topic_majority() {
        let (c, e, s) = sep2_setup();
        let params = PropagationParams::new(2, 100.0, 50.0).unwrap();
        let (aug, report) =
            augment(&c, &e, &s, &params, "g1", 7, &KMeansConfig::default()).unwrap();
        assert_eq!(report.totals.synthetic_0 + report.totals.synthetic_1, 900);
        assert_eq!(
            report.totals.synthetic_1,
            aug.label_counts("g1").synthetic_1
        );
        assert!(report.is_conserved());
        assert_eq!(c.original_label_digest(), aug.original_label_digest());
        for doc in aug.documents() {
            if let LabelState::Synthetic(_) = doc.label("g1") {
                assert_eq!(c.get(&doc.id).unwrap().label("g1"), LabelState::Unlabeled);
            }
        }
        let again = augment(&c, &e, &s, &params, "g1", 7, &KMeansConfig::default()).unwrap();
        assert_eq!(again.0, aug);
        assert_eq!(again.1, report);
    }

    #[test]
    fn nothing_to_propagate_without_unlabeled_docs() {
        let (c, e, s) = sep2_setup();
        let labeled_only: Vec<Document> = c
            .documents()
            .iter()
            .filter(|d| d.label("g1").original().is_some())
            .cloned()
            .collect();
        let c2 = Corpus::new(labeled_only, vec!["g1".into()]).unwrap();
        let params = PropagationParams::new(2, 100.0, 50.0).unwrap();
        let (aug, report) =
            augment(&c2, &e, &s, &params, "g1", 0, &KMeansConfig::default()).unwrap();
        assert_eq!(aug, c2);
        assert_eq!(report.totals.synthetic_0 + report.totals.synthetic_1, 0);
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn invalid_params() {
        assert!(PropagationParams::new(1, 10.0, 50.0).is_err());
        assert!(PropagationParams::new(5, 0.0, 50.0).is_err());
        assert!(PropagationParams::new(5, 101.0, 50.0).is_err());
        assert!(PropagationParams::new(5, 10.0, 100.0).is_err());
        assert!(PropagationParams::new(5, 100.0, 50.0).is_ok());
    }

    #[test]
    fn report_json_shape() {
        let (c, e, s) = sep2_setup();
        let params = PropagationParams::new(2, 25.0, 60.0).unwrap();
        let (_, report) = augment(&c, &e, &s, &params, "g1", 7, &KMeansConfig::default()).unwrap();
        let json: serde_json::Value = serde_json::to_value(&report).unwrap();
        for key in ["goal", "params", "clusters", "totals"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        let cluster = &json["clusters"][0];
        for key in ["id", "size", "retained", "p", "decision", "assigned"] {
            assert!(cluster.get(key).is_some(), "missing {key}");
        }
        for key in ["synthetic_1", "synthetic_0", "skipped"] {
            assert!(json["totals"].get(key).is_some());
        }
    }
}
