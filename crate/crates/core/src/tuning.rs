//! Masked-validation grid search over propagation parameters.
//!
//! Validation (or test) documents enter clustering as unlabeled; the labels
//! propagated onto them are scored against their hidden originals. Metrics
//! only count masked documents that received a label; coverage reports how
//! many did.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{kmeans_fit, ClusterModel, KMeansConfig};
use crate::corpus::{Corpus, Split, SplitAssignment};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::propagation::{
    clustering_input, propagate_all, ClusteringInput, PropagationOutcome, PropagationParams,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParamGrid {
    pub clusters: Vec<usize>,
    pub radii: Vec<f64>,
    pub thresholds: Vec<f64>,
}

impl Default for ParamGrid {
    fn default() -> Self {
        ParamGrid {
            clusters: vec![5, 10, 25, 50, 100],
            radii: vec![5.0, 10.0, 25.0, 100.0],
            thresholds: vec![50.0, 60.0, 70.0],
        }
    }
}

impl ParamGrid {
    pub fn len(&self) -> usize {
        self.clusters.len() * self.radii.len() * self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidParameter(
                "every grid axis needs at least one value".into(),
            ));
        }
        for &k in &self.clusters {
            for &r in &self.radii {
                for &t in &self.thresholds {
                    PropagationParams::new(k, r, t)?;
                }
            }
        }
        Ok(())
    }

    /// Every combination, clusters outermost, thresholds innermost.
    pub fn combos(&self) -> Vec<PropagationParams> {
        let mut out = Vec::with_capacity(self.len());
        for &clusters in &self.clusters {
            for &radius_pct in &self.radii {
                for &threshold_pct in &self.thresholds {
                    out.push(PropagationParams {
                        clusters,
                        radius_pct,
                        threshold_pct,
                    });
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuningConfig {
    pub grid: ParamGrid,
    /// Combos whose coverage falls below this are not eligible for selection.
    pub min_coverage: f64,
    pub kmeans: KMeansConfig,
}

impl Default for TuningConfig {
    fn default() -> Self {
        TuningConfig {
            grid: ParamGrid::default(),
            min_coverage: 0.25,
            kmeans: KMeansConfig::default(),
        }
    }
}

/// Confusion counts over masked documents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskedMetrics {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub masked: usize,
    pub assigned: usize,
    pub skipped: usize,
}

impl MaskedMetrics {
    /// Tallies `(truth, propagated)` pairs; `None` means no label was assigned.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, Option<bool>)>) -> Self {
        let mut m = MaskedMetrics::default();
        for (truth, predicted) in pairs {
            m.masked += 1;
            match (truth, predicted) {
                (_, None) => m.skipped += 1,
                (true, Some(true)) => m.tp += 1,
                (false, Some(false)) => m.tn += 1,
                (false, Some(true)) => m.fp += 1,
                (true, Some(false)) => m.fn_ += 1,
            }
        }
        m.assigned = m.masked - m.skipped;
        m
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.assigned > 0).then(|| (self.tp + self.tn) as f64 / self.assigned as f64)
    }

    pub fn sensitivity(&self) -> Option<f64> {
        let positives = self.tp + self.fn_;
        (positives > 0).then(|| self.tp as f64 / positives as f64)
    }

    pub fn coverage(&self) -> f64 {
        if self.masked == 0 {
            0.0
        } else {
            self.assigned as f64 / self.masked as f64
        }
    }

    /// Both metrics defined.
    pub fn is_valid(&self) -> bool {
        self.accuracy().is_some() && self.sensitivity().is_some()
    }

    /// Mean of accuracy and sensitivity.
    pub fn score(&self) -> Option<f64> {
        Some((self.accuracy()? + self.sensitivity()?) / 2.0)
    }
}

fn score_outcome(
    corpus: &Corpus,
    split: &SplitAssignment,
    goal: &str,
    which: Split,
    outcome: &PropagationOutcome,
) -> MaskedMetrics {
    MaskedMetrics::from_pairs(split.ids(which).filter_map(|id| {
        let truth = corpus.get(id)?.label(goal).original()?;
        Some((truth, outcome.assignments.get(id).copied()))
    }))
}

fn masked_input<'a>(
    corpus: &'a Corpus,
    split: &SplitAssignment,
    embeddings: &EmbeddingMatrix,
    goal: &str,
    which: Split,
) -> Result<ClusteringInput<'a>> {
    if which == Split::Train {
        return Err(Error::InvalidParameter(
            "the training split cannot be masked".into(),
        ));
    }
    if split.count(which) == 0 {
        return Err(Error::EmptySplit(which.name()));
    }
    clustering_input(corpus, embeddings, split, goal, Some(which))
}

/// Masks `which` (validation or test), clusters, propagates with `params`,
/// and scores the labels that landed on masked documents.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_masked(
    corpus: &Corpus,
    split: &SplitAssignment,
    embeddings: &EmbeddingMatrix,
    params: &PropagationParams,
    goal: &str,
    which: Split,
    seed: u64,
    kmeans: &KMeansConfig,
) -> Result<MaskedMetrics> {
    params.validate()?;
    let input = masked_input(corpus, split, embeddings, goal, which)?;
    let model = kmeans_fit(&input.points, params.clusters, seed, kmeans)?;
    let outcome = propagate_all(
        &model,
        &input.labels,
        params.radius_pct,
        params.threshold_pct,
    );
    Ok(score_outcome(corpus, split, goal, which, &outcome))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComboResult {
    pub params: PropagationParams,
    pub metrics: MaskedMetrics,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub coverage: f64,
    pub score: Option<f64>,
    pub valid: bool,
    /// Why the combo could not be evaluated, if it could not.
    pub note: Option<String>,
}

impl ComboResult {
    pub fn from_metrics(params: PropagationParams, metrics: MaskedMetrics) -> Self {
        ComboResult {
            params,
            accuracy: metrics.accuracy(),
            sensitivity: metrics.sensitivity(),
            coverage: metrics.coverage(),
            score: metrics.score(),
            valid: metrics.is_valid(),
            metrics,
            note: None,
        }
    }

    fn failed(params: PropagationParams, masked: usize, note: String) -> Self {
        let metrics = MaskedMetrics {
            masked,
            skipped: masked,
            ..Default::default()
        };
        ComboResult {
            note: Some(note),
            ..ComboResult::from_metrics(params, metrics)
        }
    }

    pub fn is_eligible(&self, min_coverage: f64) -> bool {
        self.valid && self.coverage >= min_coverage
    }
}

/// Total preference order: higher score, then fewer clusters, smaller
/// radius, higher threshold.
fn preference(a: &ComboResult, b: &ComboResult) -> Ordering {
    let score = |c: &ComboResult| c.score.unwrap_or(f64::NEG_INFINITY);
    score(a)
        .total_cmp(&score(b))
        .then_with(|| b.params.clusters.cmp(&a.params.clusters))
        .then_with(|| b.params.radius_pct.total_cmp(&a.params.radius_pct))
        .then_with(|| a.params.threshold_pct.total_cmp(&b.params.threshold_pct))
}

/// The preferred eligible combo, independent of input order.
pub fn select_best(combos: &[ComboResult], min_coverage: f64) -> Option<&ComboResult> {
    combos
        .iter()
        .filter(|c| c.is_eligible(min_coverage))
        .max_by(|a, b| preference(a, b))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub goal: String,
    pub seed: u64,
    pub min_coverage: f64,
    pub combos: Vec<ComboResult>,
    pub best: ComboResult,
}

fn combos_for_model(
    corpus: &Corpus,
    split: &SplitAssignment,
    goal: &str,
    model: &ClusterModel,
    input: &ClusteringInput,
    grid: &ParamGrid,
) -> Vec<ComboResult> {
    let mut out = Vec::new();
    for &radius_pct in &grid.radii {
        for &threshold_pct in &grid.thresholds {
            let params = PropagationParams {
                clusters: model.k,
                radius_pct,
                threshold_pct,
            };
            let outcome = propagate_all(model, &input.labels, radius_pct, threshold_pct);
            let metrics = score_outcome(corpus, split, goal, Split::Validation, &outcome);
            out.push(ComboResult::from_metrics(params, metrics));
        }
    }
    out
}

/// Evaluates every grid combo on the validation split and picks the best.
/// Clusterings are shared across radii and thresholds of the same `k`, and
/// different `k` run in parallel; the report order is the grid order.
pub fn grid_search(
    corpus: &Corpus,
    split: &SplitAssignment,
    embeddings: &EmbeddingMatrix,
    config: &TuningConfig,
    goal: &str,
    seed: u64,
) -> Result<ValidationReport> {
    config.grid.validate()?;
    let input = masked_input(corpus, split, embeddings, goal, Split::Validation)?;
    let masked = split.count(Split::Validation);
    let per_k: Vec<Vec<ComboResult>> = config
        .grid
        .clusters
        .par_iter()
        .map(
            |&k| match kmeans_fit(&input.points, k, seed, &config.kmeans) {
                Ok(model) => combos_for_model(corpus, split, goal, &model, &input, &config.grid),
                Err(e) => config
                    .grid
                    .combos()
                    .into_iter()
                    .filter(|p| p.clusters == k)
                    .map(|p| ComboResult::failed(p, masked, e.to_string()))
                    .collect(),
            },
        )
        .collect();
    let combos: Vec<ComboResult> = per_k.into_iter().flatten().collect();
    let best = select_best(&combos, config.min_coverage)
        .cloned()
        .ok_or_else(|| Error::NoValidCombo {
            goal: goal.to_string(),
            min_coverage: config.min_coverage,
        })?;
    Ok(ValidationReport {
        goal: goal.to_string(),
        seed,
        min_coverage: config.min_coverage,
        combos,
        best,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub goal: String,
    pub params: PropagationParams,
    pub validation_accuracy: Option<f64>,
    pub validation_sensitivity: Option<f64>,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub coverage: f64,
    pub metrics: MaskedMetrics,
}

/// Re-runs the masked evaluation on the test split with the selected params.
pub fn test_confirm(
    corpus: &Corpus,
    split: &SplitAssignment,
    embeddings: &EmbeddingMatrix,
    validation: &ValidationReport,
    goal: &str,
    seed: u64,
    kmeans: &KMeansConfig,
) -> Result<TestReport> {
    let params = validation.best.params;
    let metrics = evaluate_masked(
        corpus,
        split,
        embeddings,
        &params,
        goal,
        Split::Test,
        seed,
        kmeans,
    )?;
    Ok(TestReport {
        goal: goal.to_string(),
        params,
        validation_accuracy: validation.best.accuracy,
        validation_sensitivity: validation.best.sensitivity,
        accuracy: metrics.accuracy(),
        sensitivity: metrics.sensitivity(),
        coverage: metrics.coverage(),
        metrics,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub const GRID_CSV_HEADER: [&str; 10] = [
    "goal",
    "K",
    "radius",
    "threshold",
    "accuracy",
    "sensitivity",
    "coverage",
    "assigned",
    "skipped",
    "valid",
];

/// One row per combo: `goal,K,radius,threshold,accuracy,sensitivity,coverage,assigned,skipped,valid`.
pub fn write_grid_csv(path: &Path, reports: &[&ValidationReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(GRID_CSV_HEADER)?;
    for report in reports {
        for c in &report.combos {
            w.write_record([
                report.goal.clone(),
                c.params.clusters.to_string(),
                c.params.radius_pct.to_string(),
                c.params.threshold_pct.to_string(),
                opt(c.accuracy),
                opt(c.sensitivity),
                c.coverage.to_string(),
                c.metrics.assigned.to_string(),
                c.metrics.skipped.to_string(),
                c.valid.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Best-combo record with the columns of a per-goal parameter table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub goal: String,
    pub clusters: usize,
    pub distance_pct: f64,
    pub threshold_pct: f64,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub coverage: f64,
}

impl From<&ValidationReport> for BestRecord {
    fn from(r: &ValidationReport) -> Self {
        BestRecord {
            goal: r.goal.clone(),
            clusters: r.best.params.clusters,
            distance_pct: r.best.params.radius_pct,
            threshold_pct: r.best.params.threshold_pct,
            accuracy: r.best.accuracy,
            sensitivity: r.best.sensitivity,
            coverage: r.best.coverage,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::split_labeled;
    use crate::embedding::{build_vocab, tfidf_embed};
    use crate::synthgen::{generate, SyntheticSpec};

    #[test]
    fn confusion_arithmetic() {
        let m = MaskedMetrics::from_pairs([
            (true, Some(true)),
            (true, Some(false)),
            (false, Some(false)),
            (false, None),
        ]);
        assert_eq!(m.accuracy(), Some(2.0 / 3.0));
        assert_eq!(m.sensitivity(), Some(0.5));
        assert_eq!(m.coverage(), 0.75);
        assert_eq!(m.tp + m.tn + m.fp + m.fn_, m.assigned);
        assert_eq!(m.assigned + m.skipped, m.masked);
    }

    #[test]
    fn perfect_and_undefined() {
        let m = MaskedMetrics::from_pairs([(true, Some(true)), (false, Some(false))]);
        assert_eq!((m.accuracy(), m.sensitivity()), (Some(1.0), Some(1.0)));
        let none = MaskedMetrics::from_pairs([(true, None), (false, None)]);
        assert!(!none.is_valid());
        assert_eq!(none.accuracy(), None);
    }

    fn fixture(k: usize, r: f64, t: f64, acc: f64, sens: f64, cov: f64) -> ComboResult {
        ComboResult {
            params: PropagationParams {
                clusters: k,
                radius_pct: r,
                threshold_pct: t,
            },
            metrics: MaskedMetrics::default(),
            accuracy: Some(acc),
            sensitivity: Some(sens),
            coverage: cov,
            score: Some((acc + sens) / 2.0),
            valid: true,
            note: None,
        }
    }

    #[test]
    fn tie_breaks() {
        let combos = vec![
            fixture(50, 10.0, 60.0, 0.8, 0.8, 1.0),
            fixture(25, 10.0, 60.0, 0.8, 0.8, 1.0),
        ];
        assert_eq!(select_best(&combos, 0.25).unwrap().params.clusters, 25);
        let combos = vec![
            fixture(25, 25.0, 60.0, 0.8, 0.8, 1.0),
            fixture(25, 10.0, 50.0, 0.8, 0.8, 1.0),
            fixture(25, 10.0, 70.0, 0.8, 0.8, 1.0),
        ];
        let best = select_best(&combos, 0.25).unwrap();
        assert_eq!(
            (best.params.radius_pct, best.params.threshold_pct),
            (10.0, 70.0)
        );
        // A higher score beats any tie-break; low coverage is ineligible.
        let combos = vec![
            fixture(5, 5.0, 50.0, 0.9, 0.9, 0.1),
            fixture(100, 100.0, 50.0, 0.85, 0.8, 0.9),
            fixture(5, 100.0, 50.0, 0.8, 0.8, 0.9),
        ];
        assert_eq!(select_best(&combos, 0.25).unwrap().params.clusters, 100);
        let mut reversed = combos.clone();
        reversed.reverse();
        assert_eq!(select_best(&combos, 0.25), select_best(&reversed, 0.25));
    }

    #[test]
    fn default_grid_has_sixty_combos() {
        let grid = ParamGrid::default();
        assert_eq!(grid.len(), 60);
        assert_eq!(grid.combos().len(), 60);
        assert_eq!(grid.clusters, [5, 10, 25, 50, 100]);
        assert_eq!(grid.radii, [5.0, 10.0, 25.0, 100.0]);
        assert_eq!(grid.thresholds, [50.0, 60.0, 70.0]);
    }

    fn sep2() -> (Corpus, EmbeddingMatrix, SplitAssignment) {
        let (c, _) = generate(&SyntheticSpec::preset("sep2").unwrap()).unwrap();
        let v = build_vocab(&c, 2).unwrap();
        let e = tfidf_embed(&c, &v, None, 1).unwrap();
        let s = split_labeled(&c, "g1", 11).unwrap();
        (c, e, s)
    }

    #[test]
    fn empty_test_split_is_an_error() {
        let (c, e, mut s) = sep2();
        s.assignment.retain(|_, sp| *sp != Split::Test);
        let p = PropagationParams::new(5, 100.0, 50.0).unwrap();
        assert!(matches!(
            evaluate_masked(
                &c,
                &s,
                &e,
                &p,
                "g1",
                Split::Test,
                0,
                &KMeansConfig::default()
            ),
            Err(Error::EmptySplit("test"))
        ));
    }

    #[test]
    fn grid_search_on_planted_topics() {
        let (c, e, s) = sep2();
        let report = grid_search(&c, &s, &e, &TuningConfig::default(), "g1", 5).unwrap();
        assert_eq!(report.combos.len(), 60);
        for combo in &report.combos {
            let m = combo.metrics;
            assert_eq!(m.tp + m.tn + m.fp + m.fn_, m.assigned);
            assert_eq!(m.assigned + m.skipped, m.masked);
            if let (Some(a), Some(b)) = (combo.accuracy, combo.sensitivity) {
                assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
            }
            if combo.is_eligible(report.min_coverage) {
                assert!(report.best.score >= combo.score);
            }
        }
        assert!(
            [5, 10].contains(&report.best.params.clusters),
            "{:?}",
            report.best.params
        );
        assert!(report.best.accuracy.unwrap() >= 0.9);

        // The combo evaluated on its own reproduces the grid entry.
        let direct = evaluate_masked(
            &c,
            &s,
            &e,
            &report.best.params,
            "g1",
            Split::Validation,
            5,
            &KMeansConfig::default(),
        )
        .unwrap();
        assert_eq!(direct, report.best.metrics);

        let test = test_confirm(&c, &s, &e, &report, "g1", 5, &KMeansConfig::default()).unwrap();
        assert!((test.accuracy.unwrap() - report.best.accuracy.unwrap()).abs() <= 0.1);
    }

    #[test]
    fn grid_csv_has_one_row_per_combo() {
        let (c, e, s) = sep2();
        let config = TuningConfig {
            grid: ParamGrid {
                clusters: vec![2, 5],
                radii: vec![25.0, 100.0],
                thresholds: vec![50.0],
            },
            ..Default::default()
        };
        let report = grid_search(&c, &s, &e, &config, "g1", 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        write_grid_csv(&path, &[&report]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "goal,K,radius,threshold,accuracy,sensitivity,coverage,assigned,skipped,valid"
        );
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("g1,2,25,50,"));
    }

    #[test]
    fn oversized_k_marks_combos_invalid() {
        let (c, e, s) = sep2();
        let config = TuningConfig {
            grid: ParamGrid {
                clusters: vec![2, 5000],
                radii: vec![100.0],
                thresholds: vec![50.0],
            },
            ..Default::default()
        };
        let report = grid_search(&c, &s, &e, &config, "g1", 5).unwrap();
        assert!(!report.combos[1].valid);
        assert!(report.combos[1].note.is_some());
        assert_eq!(report.best.params.clusters, 2);
    }
}
