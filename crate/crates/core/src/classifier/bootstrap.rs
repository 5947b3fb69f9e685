//! Paired bootstrap comparison of classifiers trained on original versus
//! augmented labels.
//!
//! The evaluation universe is the set of originally labeled documents
//! (replicas excluded). Each iteration draws `train_fraction · n` of them with
//! replacement; both arms train on that same draw, the augmented arm also on
//! a `train_fraction` resample of the synthetic-labeled documents. The
//! documents never drawn form the shared test set.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{quantiles, welch_t_test, BoxStats, WelchResult};
use super::{train, ClassifierConfig, Dataset, MIN_PER_CLASS};
use crate::corpus::{Corpus, Document};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub iterations: usize,
    pub train_fraction: f64,
    /// Draws per iteration before giving up on a usable resample.
    pub max_attempts: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            iterations: 200,
            train_fraction: 0.8,
            max_attempts: 10,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 2 {
            return Err(Error::InvalidParameter(format!(
                "bootstrap needs at least 2 iterations, got {}",
                self.iterations
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "train_fraction must lie in (0, 1], got {}",
                self.train_fraction
            )));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidParameter(
                "max_attempts must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSamples {
    pub accuracy: Vec<f64>,
    pub sensitivity: Vec<f64>,
    pub mean_accuracy: f64,
    pub mean_sensitivity: f64,
    pub accuracy_box: Option<BoxStats>,
    pub sensitivity_box: Option<BoxStats>,
}

impl ArmSamples {
    fn new(accuracy: Vec<f64>, sensitivity: Vec<f64>) -> Self {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        ArmSamples {
            mean_accuracy: mean(&accuracy),
            mean_sensitivity: mean(&sensitivity),
            accuracy_box: quantiles(&accuracy),
            sensitivity_box: quantiles(&sensitivity),
            accuracy,
            sensitivity,
        }
    }
}

/// Per-iteration record of the resample actually used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub attempts: usize,
    /// First universe indices drawn; identical for both arms.
    pub head: Vec<usize>,
    pub out_of_bag: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub goal: String,
    pub iterations: usize,
    pub seed: u64,
    pub universe: usize,
    pub synthetic_pool: usize,
    pub original: ArmSamples,
    pub augmented: ArmSamples,
    /// Augmented against original; `None` when both samples are constant.
    pub accuracy_test: Option<WelchResult>,
    pub sensitivity_test: Option<WelchResult>,
    pub traces: Vec<IterationTrace>,
}

const HEAD_LEN: usize = 5;

struct Outcome {
    original: (f64, f64),
    augmented: (f64, f64),
    trace: IterationTrace,
}

struct Pools<'a> {
    universe: Vec<&'a Document>,
    labels: Vec<bool>,
    synthetic: Vec<&'a Document>,
}

fn pools<'a>(original: &Corpus, augmented: &'a Corpus, goal: &str) -> Result<Pools<'a>> {
    let mut universe: Vec<&Document> = Vec::new();
    let mut labels = Vec::new();
    for doc in original.documents().iter().filter(|d| !d.is_replica()) {
        let Some(label) = doc.label(goal).original() else {
            continue;
        };
        let aug = augmented
            .get(&doc.id)
            .filter(|a| a.label(goal).original() == Some(label))
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "augmented corpus disagrees with the original on {:?}",
                    doc.id
                ))
            })?;
        universe.push(aug);
        labels.push(label);
    }
    let mut order: Vec<usize> = (0..universe.len()).collect();
    order.sort_by(|&a, &b| universe[a].id.cmp(&universe[b].id));
    let universe: Vec<&Document> = order.iter().map(|&i| universe[i]).collect();
    let labels: Vec<bool> = order.iter().map(|&i| labels[i]).collect();

    let mut synthetic: Vec<&Document> = augmented
        .documents()
        .iter()
        .filter(|d| !d.is_replica() && d.label(goal).synthetic().is_some())
        .collect();
    synthetic.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(Pools {
        universe,
        labels,
        synthetic,
    })
}

fn draw_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).round() as usize).max(1)
}

#[allow(clippy::too_many_arguments)]
fn iteration(
    pools: &Pools,
    embeddings: &EmbeddingMatrix,
    goal: &str,
    classifier: &ClassifierConfig,
    config: &BootstrapConfig,
    index: usize,
    iter_seed: u64,
) -> Result<Outcome> {
    let n = pools.universe.len();
    let m = draw_count(n, config.train_fraction);
    let mut rng = seed::rng(iter_seed);
    let mut chosen = None;
    for attempt in 1..=config.max_attempts {
        let draw: Vec<usize> = (0..m).map(|_| rng.random_range(0..n)).collect();
        let mut in_bag = vec![false; n];
        draw.iter().for_each(|&i| in_bag[i] = true);
        let oob: Vec<usize> = (0..n).filter(|&i| !in_bag[i]).collect();
        let oob_pos = oob.iter().filter(|&&i| pools.labels[i]).count();
        let train_pos = draw.iter().filter(|&&i| pools.labels[i]).count();
        if oob_pos > 0
            && oob_pos < oob.len()
            && train_pos >= MIN_PER_CLASS
            && m - train_pos >= MIN_PER_CLASS
        {
            chosen = Some((attempt, draw, oob));
            break;
        }
    }
    let (attempts, draw, oob) = chosen.ok_or(Error::ResampleExhausted {
        iteration: index,
        attempts: config.max_attempts,
    })?;

    let original_docs: Vec<&Document> = draw.iter().map(|&i| pools.universe[i]).collect();
    let mut augmented_docs = original_docs.clone();
    if !pools.synthetic.is_empty() {
        let s = pools.synthetic.len();
        augmented_docs.extend(
            (0..draw_count(s, config.train_fraction))
                .map(|_| pools.synthetic[rng.random_range(0..s)]),
        );
    }
    let head: Vec<usize> = draw.iter().take(HEAD_LEN).copied().collect();
    let same_head = original_docs
        .iter()
        .zip(&augmented_docs)
        .take(HEAD_LEN)
        .all(|(a, b)| std::ptr::eq(*a, *b));
    assert!(same_head, "arms diverged at iteration {index}");

    let test_docs: Vec<&Document> = oob.iter().map(|&i| pools.universe[i]).collect();
    if let Some(doc) = test_docs
        .iter()
        .find(|d| d.label(goal).synthetic().is_some())
    {
        return Err(Error::SyntheticInEvaluation(doc.id.clone()));
    }
    let test = Dataset::from_docs(&test_docs, embeddings, goal)?;

    let cfg = ClassifierConfig {
        seed: seed::derive(iter_seed, &["classifier"]),
        ..classifier.clone()
    };
    let score = |docs: &[&Document]| -> Result<(f64, f64)> {
        let model = train(&Dataset::from_docs(docs, embeddings, goal)?, &cfg)?;
        let eval = model.evaluate(&test)?;
        Ok((
            eval.accuracy,
            eval.sensitivity.expect("test set holds positives"),
        ))
    };
    Ok(Outcome {
        original: score(&original_docs)?,
        augmented: score(&augmented_docs)?,
        trace: IterationTrace {
            attempts,
            head,
            out_of_bag: oob.len(),
        },
    })
}

/// Runs the paired bootstrap for `goal`. Iteration `i` uses the child seed
/// `(seed, i)`, so results do not depend on how iterations are scheduled.
pub fn bootstrap_eval(
    original: &Corpus,
    augmented: &Corpus,
    embeddings: &EmbeddingMatrix,
    goal: &str,
    classifier: &ClassifierConfig,
    config: &BootstrapConfig,
    seed: u64,
) -> Result<BootstrapReport> {
    config.validate()?;
    classifier.validate()?;
    original.require_goal(goal)?;
    let pools = pools(original, augmented, goal)?;
    let positives = pools.labels.iter().filter(|&&y| y).count();
    let negatives = pools.labels.len() - positives;
    if positives < MIN_PER_CLASS + 1 || negatives < MIN_PER_CLASS + 1 {
        return Err(Error::TooFewPerClass {
            expected: MIN_PER_CLASS + 1,
            positives,
            negatives,
        });
    }

    let outcomes = (0..config.iterations)
        .into_par_iter()
        .map(|i| {
            iteration(
                &pools,
                embeddings,
                goal,
                classifier,
                config,
                i,
                seed::child(seed, i as u64),
            )
        })
        .collect::<Result<Vec<Outcome>>>()?;

    let column = |f: fn(&Outcome) -> f64| outcomes.iter().map(f).collect::<Vec<f64>>();
    let original_arm = ArmSamples::new(column(|o| o.original.0), column(|o| o.original.1));
    let augmented_arm = ArmSamples::new(column(|o| o.augmented.0), column(|o| o.augmented.1));
    let test = |a: &[f64], b: &[f64]| match welch_t_test(a, b) {
        Ok(r) => Ok(Some(r)),
        Err(Error::ZeroVariance) => Ok(None),
        Err(e) => Err(e),
    };
    Ok(BootstrapReport {
        goal: goal.to_string(),
        iterations: config.iterations,
        seed,
        universe: pools.universe.len(),
        synthetic_pool: pools.synthetic.len(),
        accuracy_test: test(&augmented_arm.accuracy, &original_arm.accuracy)?,
        sensitivity_test: test(&augmented_arm.sensitivity, &original_arm.sensitivity)?,
        original: original_arm,
        augmented: augmented_arm,
        traces: outcomes.into_iter().map(|o| o.trace).collect(),
    })
}

/// One comparison row: arm means and the p-values of their differences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub goal: String,
    pub orig_acc: f64,
    pub orig_sens: f64,
    pub aug_acc: f64,
    pub aug_sens: f64,
    pub p_acc: Option<f64>,
    pub p_sens: Option<f64>,
}

impl From<&BootstrapReport> for ComparisonRow {
    fn from(r: &BootstrapReport) -> Self {
        ComparisonRow {
            goal: r.goal.clone(),
            orig_acc: r.original.mean_accuracy,
            orig_sens: r.original.mean_sensitivity,
            aug_acc: r.augmented.mean_accuracy,
            aug_sens: r.augmented.mean_sensitivity,
            p_acc: r.accuracy_test.map(|t| t.p),
            p_sens: r.sensitivity_test.map(|t| t.p),
        }
    }
}

/// `goal,orig_acc,orig_sens,aug_acc,aug_sens,p_acc,p_sens`; an undefined
/// p-value is left empty.
pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record([
            "goal",
            "orig_acc",
            "orig_sens",
            "aug_acc",
            "aug_sens",
            "p_acc",
            "p_sens",
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
