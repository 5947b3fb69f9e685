//! Per-goal binary classifiers over document embeddings.
//!
//! A feedforward network (ReLU hidden layers with inverted dropout, sigmoid
//! output) trained on mean binary cross-entropy with Adam. Predictions are
//! positive only when the probability strictly exceeds the threshold.

mod bootstrap;
mod network;
mod stats;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::embedding::{Backend, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::seed;

pub use bootstrap::{
    bootstrap_eval, write_comparison_csv, ArmSamples, BootstrapConfig, BootstrapReport,
    ComparisonRow,
};
pub use network::{Adam, Mlp};
pub use stats::{quantiles, welch_t_test, BoxStats, WelchResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    /// Drop probability after each hidden layer; same length as `hidden`.
    pub dropout: Vec<f64>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![64, 16],
            dropout: vec![0.8, 0.6],
            epochs: 100,
            learning_rate: 0.001,
            batch_size: 32,
            seed: 0,
            threshold: 0.5,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.dropout.len() != self.hidden.len() {
            return bad(format!(
                "{} dropout probabilities for {} hidden layers",
                self.dropout.len(),
                self.hidden.len()
            ));
        }
        if self.hidden.contains(&0) {
            return bad("hidden layers need at least one unit".into());
        }
        if let Some(p) = self.dropout.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return bad(format!("dropout probability must lie in [0, 1), got {p}"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            ));
        }
        Ok(())
    }
}

/// Row-major features with one binary label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub backend: Backend,
    pub dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<bool>,
}

impl Dataset {
    pub fn new(backend: Backend, dim: usize) -> Self {
        Dataset {
            backend,
            dim,
            features: Vec::new(),
            labels: Vec::new(),
        }
    }

    /// Features from `embeddings` and the goal label (original or synthetic)
    /// of each document. Repeated documents repeat rows.
    pub fn from_docs(docs: &[&Document], embeddings: &EmbeddingMatrix, goal: &str) -> Result<Self> {
        let mut data = Dataset::new(embeddings.backend(), embeddings.dim());
        for doc in docs {
            let label = doc.label(goal).value().ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "document {:?} has no label for goal {goal:?}",
                    doc.id
                ))
            })?;
            data.push(embeddings.vector_for(doc)?, label);
        }
        Ok(data)
    }

    pub fn push(&mut self, x: &[f64], label: bool) {
        assert_eq!(x.len(), self.dim);
        self.features.extend_from_slice(x);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let positives = self.labels.iter().filter(|&&y| y).count();
        (positives, self.len() - positives)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    pub config: ClassifierConfig,
    pub backend: Backend,
    pub dim: usize,
    pub network: Mlp,
    /// Mean training loss (dropout active) of each epoch.
    pub loss_curve: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f64,
    pub label: bool,
}

/// Accuracy and sensitivity of a classifier on a labeled set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub sensitivity: Option<f64>,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `label`, computed
/// without forming the probability.
pub fn bce_with_logit(logit: f64, label: bool) -> f64 {
    let softplus = logit.max(0.0) + (-logit.abs()).exp().ln_1p();
    if label {
        softplus - logit
    } else {
        softplus
    }
}

/// Minimum examples of each class needed to train.
pub const MIN_PER_CLASS: usize = 2;

/// Trains a fresh network on `data`. Mini-batches are reshuffled every
/// epoch; batch order and dropout masks come from `config.seed`.
pub fn train(data: &Dataset, config: &ClassifierConfig) -> Result<TrainedClassifier> {
    config.validate()?;
    let (positives, negatives) = data.class_counts();
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass);
    }
    if positives < MIN_PER_CLASS || negatives < MIN_PER_CLASS {
        return Err(Error::TooFewPerClass {
            expected: MIN_PER_CLASS,
            positives,
            negatives,
        });
    }
    let mut rng = seed::rng(config.seed);
    let mut network = Mlp::new(data.dim, &config.hidden, &mut rng);
    let mut adam = Adam::new(network.num_params(), config.learning_rate);
    let mut grad = vec![0.0; network.num_params()];
    let mut scratch = network.scratch();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut batch_loss = 0.0;
            for &i in batch {
                network.sample_masks(&config.dropout, &mut rng, &mut scratch);
                batch_loss +=
                    network.accumulate(data.row(i), data.labels[i], Some(&mut scratch), &mut grad);
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite {
                    stage: "classifier",
                    epoch,
                    step,
                });
            }
            epoch_loss += batch_loss;
            adam.step(network.params_mut(), &grad);
            if network.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite {
                    stage: "classifier",
                    epoch,
                    step,
                });
            }
        }
        loss_curve.push(epoch_loss / data.len() as f64);
    }

    Ok(TrainedClassifier {
        config: config.clone(),
        backend: data.backend,
        dim: data.dim,
        network,
        loss_curve,
    })
}

impl TrainedClassifier {
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let probability = sigmoid(self.network.forward(x));
        Ok(Prediction {
            probability,
            label: probability > self.config.threshold,
        })
    }

    pub fn evaluate(&self, data: &Dataset) -> Result<Evaluation> {
        if data.dim != self.dim || data.backend != self.backend {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: data.dim,
            });
        }
        let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
        for (i, &truth) in data.labels.iter().enumerate() {
            match (truth, self.predict(data.row(i))?.label) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
            }
        }
        if data.is_empty() {
            return Err(Error::EmptySplit("evaluation"));
        }
        Ok(Evaluation {
            accuracy: (tp + tn) as f64 / data.len() as f64,
            sensitivity: (tp + fn_ > 0).then(|| tp as f64 / (tp + fn_) as f64),
            tp,
            tn,
            fp,
            fn_,
        })
    }
}

/// Uniform draw in `[-bound, bound)`.
pub(crate) fn uniform(rng: &mut impl Rng, bound: f64) -> f64 {
    rng.random_range(-bound..bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::split_labeled;
    use crate::embedding::{build_vocab, tfidf_embed};
    use crate::synthgen::{generate, SyntheticSpec};

    fn blobs(n: usize, seed: u64) -> Dataset {
        let mut rng = seed::rng(seed);
        let mut data = Dataset::new(Backend::Tfidf, 2);
        for i in 0..n {
            let label = i % 2 == 0;
            let c = if label { 2.0 } else { -2.0 };
            let x = [
                c + rng.random_range(-1.0..1.0),
                c + rng.random_range(-1.0..1.0),
            ];
            data.push(&x, label);
        }
        data
    }

    #[test]
    fn separable_blobs() {
        let data = blobs(200, 3);
        let model = train(&data, &ClassifierConfig::default()).unwrap();
        assert_eq!(model.loss_curve.len(), 100);
        let eval = model.evaluate(&data).unwrap();
        assert!(eval.accuracy >= 0.95, "{eval:?}");
        assert!(model.network.params().iter().all(|p| p.is_finite()));
    }

    #[test]
    fn single_class_is_rejected() {
        let mut data = Dataset::new(Backend::Tfidf, 2);
        for i in 0..10 {
            data.push(&[i as f64, 0.0], true);
        }
        assert!(matches!(
            train(&data, &ClassifierConfig::default()),
            Err(Error::SingleClass)
        ));
        data.push(&[0.0, 0.0], false);
        assert!(matches!(
            train(&data, &ClassifierConfig::default()),
            Err(Error::TooFewPerClass { .. })
        ));
    }

    #[test]
    fn threshold_is_strict() {
        let data = blobs(10, 1);
        let mut model = train(
            &data,
            &ClassifierConfig {
                epochs: 1,
                ..Default::default()
            },
        )
        .unwrap();
        model.network.params_mut().iter_mut().for_each(|p| *p = 0.0);
        for x in [[0.0, 0.0], [5.0, -3.0]] {
            let p = model.predict(&x).unwrap();
            assert_eq!(p.probability, 0.5);
            assert!(!p.label);
        }
        // Bias alone sets the logit: sigmoid(logit(0.51)) = 0.51.
        let last = model.network.num_params() - 1;
        model.network.params_mut()[last] = (0.51f64 / 0.49).ln();
        let p = model.predict(&[1.0, 1.0]).unwrap();
        assert!((p.probability - 0.51).abs() < 1e-12);
        assert!(p.label);
        assert!(matches!(
            model.predict(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn deterministic_given_seed() {
        let data = blobs(60, 9);
        let cfg = ClassifierConfig {
            epochs: 5,
            seed: 4,
            ..Default::default()
        };
        assert_eq!(train(&data, &cfg).unwrap(), train(&data, &cfg).unwrap());
        let other = ClassifierConfig {
            seed: 5,
            ..cfg.clone()
        };
        assert_ne!(
            train(&data, &cfg).unwrap().network,
            train(&data, &other).unwrap().network
        );
    }

    #[test]
    fn loss_descends_on_planted_topics() {
        let (c, _) = generate(&SyntheticSpec::preset("sep2").unwrap()).unwrap();
        let v = build_vocab(&c, 2).unwrap();
        let e = tfidf_embed(&c, &v, Some(128), 1).unwrap();
        let s = split_labeled(&c, "g1", 1).unwrap();
        let docs: Vec<&Document> = s
            .ids(crate::corpus::Split::Train)
            .map(|id| c.get(id).unwrap())
            .collect();
        let data = Dataset::from_docs(&docs, &e, "g1").unwrap();
        let model = train(&data, &ClassifierConfig::default()).unwrap();
        assert!(
            model.loss_curve[49] < model.loss_curve[0],
            "{:?}",
            &model.loss_curve[..5]
        );
    }

    #[test]
    fn unlabeled_documents_cannot_be_features() {
        let (c, _) = generate(&SyntheticSpec::preset("sep2").unwrap()).unwrap();
        let v = build_vocab(&c, 2).unwrap();
        let e = tfidf_embed(&c, &v, Some(16), 1).unwrap();
        let unlabeled = c
            .documents()
            .iter()
            .find(|d| d.label("g1").value().is_none())
            .unwrap();
        assert!(Dataset::from_docs(&[unlabeled], &e, "g1").is_err());
    }

    #[test]
    fn bce_matches_naive_formula() {
        for (z, y) in [(0.3, true), (-2.0, false), (4.0, false), (-30.0, true)] {
            let p = sigmoid(z);
            let naive = if y { -p.ln() } else { -(1.0 - p).ln() };
            approx::assert_relative_eq!(bce_with_logit(z, y), naive, max_relative = 1e-9);
        }
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            ClassifierConfig {
                dropout: vec![0.5],
                ..Default::default()
            },
            ClassifierConfig {
                dropout: vec![1.0, 0.5],
                ..Default::default()
            },
            ClassifierConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            ClassifierConfig {
                epochs: 0,
                ..Default::default()
            },
            ClassifierConfig {
                threshold: 1.0,
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err(), "{cfg:?}");
        }
    }
}
