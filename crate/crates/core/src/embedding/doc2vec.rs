//! PV-DBOW paragraph vectors.
//!
//! Each document vector is trained to predict the document's own tokens
//! through a logistic output layer with negative sampling: for a token `t`
//! and sampled noise tokens `n_1..n_k`,
//!
//! ```text
//! loss = -ln σ(d·w_t) - Σ ln σ(-d·w_n)
//! ```
//!
//! where `w` are the output word vectors. Training is a single update stream
//! so a fixed seed reproduces the model bit for bit.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{build_vocab, dot, Backend, EmbeddingMatrix, Vocabulary};
use crate::artifact::{self, MatrixMeta, FORMAT_VERSION};
use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Doc2VecParams {
    pub dim: usize,
    pub epochs: usize,
    /// Initial learning rate; decays linearly to a hundredth of it.
    pub learning_rate: f64,
    pub negatives: usize,
    /// Frequent-token subsampling threshold; 0 disables subsampling.
    pub subsample: f64,
    pub min_count: usize,
    pub infer_epochs: usize,
    pub seed: u64,
}

impl Default for Doc2VecParams {
    fn default() -> Self {
        Doc2VecParams {
            dim: 128,
            epochs: 40,
            learning_rate: 0.025,
            negatives: 5,
            subsample: 1e-4,
            min_count: 2,
            infer_epochs: 40,
            seed: 0,
        }
    }
}

impl Doc2VecParams {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidParameter(format!(
                "doc2vec dim must be >= 2, got {}",
                self.dim
            )));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidParameter(
                "doc2vec epochs must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "doc2vec learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.subsample < 0.0 {
            return Err(Error::InvalidParameter(
                "doc2vec subsample must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Noise distribution proportional to token count^0.75.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDistribution {
    cumulative: Vec<f64>,
}

impl NoiseDistribution {
    pub fn new(vocab: &Vocabulary) -> Self {
        let mut acc = 0.0;
        let cumulative = (0..vocab.len())
            .map(|i| {
                acc += (vocab.term_count(i) as f64).powf(0.75);
                acc
            })
            .collect();
        NoiseDistribution { cumulative }
    }

    pub fn probability(&self, index: usize) -> f64 {
        let total = *self.cumulative.last().unwrap_or(&1.0);
        let lo = if index == 0 {
            0.0
        } else {
            self.cumulative[index - 1]
        };
        (self.cumulative[index] - lo) / total
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let total = *self
            .cumulative
            .last()
            .expect("noise distribution over an empty vocabulary");
        let u = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss of one (document, word) pair and the derivative of that loss with
/// respect to the score `d·w`.
fn pair_terms(score: f64, positive: bool) -> (f64, f64) {
    if positive {
        (softplus(-score), sigmoid(score) - 1.0)
    } else {
        (softplus(score), sigmoid(score))
    }
}

/// Negative-sampling loss for one document vector, one target word vector and
/// a set of noise word vectors.
pub fn sgns_loss(doc: &[f64], target: &[f64], negatives: &[&[f64]]) -> f64 {
    let mut loss = pair_terms(dot(doc, target), true).0;
    for n in negatives {
        loss += pair_terms(dot(doc, n), false).0;
    }
    loss
}

#[derive(Clone, Debug, PartialEq)]
pub struct SgnsGradient {
    pub loss: f64,
    pub doc: Vec<f64>,
    pub target: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Analytic gradient of [`sgns_loss`] with respect to every input vector.
pub fn sgns_gradient(doc: &[f64], target: &[f64], negatives: &[&[f64]]) -> SgnsGradient {
    let mut grad_doc = vec![0.0; doc.len()];
    let (mut loss, g) = pair_terms(dot(doc, target), true);
    axpy(&mut grad_doc, g, target);
    let grad_target = doc.iter().map(|d| g * d).collect();
    let mut grad_negs = Vec::with_capacity(negatives.len());
    for n in negatives {
        let (l, g) = pair_terms(dot(doc, n), false);
        loss += l;
        axpy(&mut grad_doc, g, n);
        grad_negs.push(doc.iter().map(|d| g * d).collect());
    }
    SgnsGradient {
        loss,
        doc: grad_doc,
        target: grad_target,
        negatives: grad_negs,
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// One SGD step on a document vector (and, when `update_words`, on the
/// touched output word vectors). Word gradients use the pre-step document
/// vector; the document moves after all pairs are processed.
#[allow(clippy::too_many_arguments)]
fn sgns_step(
    doc: &mut [f64],
    words: &mut [f64],
    dim: usize,
    target: usize,
    negatives: &[usize],
    lr: f64,
    update_words: bool,
    doc_grad: &mut [f64],
) -> f64 {
    doc_grad.fill(0.0);
    let mut loss = 0.0;
    for (word, positive) in
        std::iter::once((target, true)).chain(negatives.iter().map(|&n| (n, false)))
    {
        let w = &mut words[word * dim..(word + 1) * dim];
        let (l, g) = pair_terms(dot(doc, w), positive);
        loss += l;
        axpy(doc_grad, g, w);
        if update_words {
            axpy(w, -lr * g, doc);
        }
    }
    axpy(doc, -lr, doc_grad);
    loss
}

/// Trained PV-DBOW model: document vectors for the training corpus plus the
/// output word vectors needed to infer new documents.
#[derive(Clone, Debug, PartialEq)]
pub struct Doc2VecModel {
    params: Doc2VecParams,
    vocab: Vocabulary,
    noise: NoiseDistribution,
    keep_prob: Vec<f64>,
    doc_ids: Vec<String>,
    doc_vectors: Vec<f64>,
    word_vectors: Vec<f64>,
    epoch_loss: Vec<f64>,
}

fn keep_probabilities(vocab: &Vocabulary, subsample: f64) -> Vec<f64> {
    let total = vocab.total_terms() as f64;
    (0..vocab.len())
        .map(|i| {
            if subsample <= 0.0 {
                return 1.0;
            }
            let freq = vocab.term_count(i) as f64 / total;
            (subsample / freq).sqrt().min(1.0)
        })
        .collect()
}

struct Trainer<'a> {
    dim: usize,
    negatives: usize,
    noise: &'a NoiseDistribution,
    keep_prob: &'a [f64],
    scratch: Vec<f64>,
    sampled: Vec<usize>,
}

impl Trainer<'_> {
    /// One pass over a document's tokens; returns (loss sum, pairs seen).
    fn pass(
        &mut self,
        doc: &mut [f64],
        words: &mut [f64],
        tokens: &[usize],
        lr: f64,
        update_words: bool,
        rng: &mut seed::Rng,
    ) -> (f64, usize) {
        let mut loss = 0.0;
        let mut steps = 0;
        for &t in tokens {
            let keep = self.keep_prob[t];
            if keep < 1.0 && rng.random::<f64>() >= keep {
                continue;
            }
            self.sampled.clear();
            for _ in 0..self.negatives {
                let n = self.noise.sample(rng);
                if n != t {
                    self.sampled.push(n);
                }
            }
            loss += sgns_step(
                doc,
                words,
                self.dim,
                t,
                &self.sampled,
                lr,
                update_words,
                &mut self.scratch,
            );
            steps += 1;
        }
        (loss, steps)
    }
}

fn token_ids(doc: &Document, vocab: &Vocabulary) -> Vec<usize> {
    doc.tokens().filter_map(|t| vocab.index_of(t)).collect()
}

fn init_vector(rng: &mut seed::Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| (rng.random::<f64>() - 0.5) / dim as f64)
        .collect()
}

fn learning_rate(lr0: f64, progress: f64) -> f64 {
    lr0 - (lr0 - lr0 / 100.0) * progress.clamp(0.0, 1.0)
}

/// Trains PV-DBOW over every non-replica document of the corpus.
pub fn train_doc2vec(corpus: &Corpus, params: &Doc2VecParams) -> Result<Doc2VecModel> {
    params.validate()?;
    let vocab = build_vocab(corpus, params.min_count)?;
    let noise = NoiseDistribution::new(&vocab);
    let keep_prob = keep_probabilities(&vocab, params.subsample);
    let dim = params.dim;

    let docs: Vec<&Document> = corpus
        .documents()
        .iter()
        .filter(|d| !d.is_replica())
        .collect();
    let tokens: Vec<Vec<usize>> = docs.iter().map(|d| token_ids(d, &vocab)).collect();
    // Each document draws from its own stream keyed by its text, so
    // identical documents are initialized and sampled identically.
    let doc_keys: Vec<u64> = docs
        .iter()
        .map(|d| seed::derive(params.seed, &["doc2vec-doc", &d.clean_text]))
        .collect();
    let mut rng = seed::rng(params.seed);
    let mut doc_vectors: Vec<f64> = Vec::with_capacity(docs.len() * dim);
    for (toks, &key) in tokens.iter().zip(&doc_keys) {
        if toks.is_empty() {
            doc_vectors.extend(std::iter::repeat_n(0.0, dim));
        } else {
            doc_vectors.extend(init_vector(&mut seed::rng(key), dim));
        }
    }
    let mut word_vectors = vec![0.0; vocab.len() * dim];

    let mut trainer = Trainer {
        dim,
        negatives: params.negatives,
        noise: &noise,
        keep_prob: &keep_prob,
        scratch: vec![0.0; dim],
        sampled: Vec::with_capacity(params.negatives),
    };
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let total_passes = (params.epochs * docs.len()).max(1) as f64;
    let mut epoch_loss = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        let mut steps = 0usize;
        for (k, &d) in order.iter().enumerate() {
            if tokens[d].is_empty() {
                continue;
            }
            let lr = learning_rate(
                params.learning_rate,
                (epoch * docs.len() + k) as f64 / total_passes,
            );
            let doc = &mut doc_vectors[d * dim..(d + 1) * dim];
            let mut doc_rng = seed::rng(seed::child(doc_keys[d], epoch as u64 + 1));
            let (l, s) = trainer.pass(doc, &mut word_vectors, &tokens[d], lr, true, &mut doc_rng);
            if !l.is_finite() {
                return Err(Error::NonFinite {
                    stage: "doc2vec training",
                    epoch,
                    step: steps,
                });
            }
            loss += l;
            steps += s;
        }
        if doc_vectors
            .iter()
            .chain(&word_vectors)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite {
                stage: "doc2vec training",
                epoch,
                step: steps,
            });
        }
        epoch_loss.push(if steps > 0 { loss / steps as f64 } else { 0.0 });
    }

    Ok(Doc2VecModel {
        params: params.clone(),
        vocab,
        noise,
        keep_prob,
        doc_ids: docs.iter().map(|d| d.id.clone()).collect(),
        doc_vectors,
        word_vectors,
        epoch_loss,
    })
}

#[derive(Serialize, Deserialize)]
struct Doc2VecMeta {
    format_version: u32,
    backend: Backend,
    params: Doc2VecParams,
    dim: usize,
    seed: u64,
    doc_vectors: MatrixMeta,
    word_vectors: MatrixMeta,
    doc_ids_file: String,
    vocab_file: String,
    epoch_loss: Vec<f64>,
}

impl Doc2VecModel {
    pub fn params(&self) -> &Doc2VecParams {
        &self.params
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn noise(&self) -> &NoiseDistribution {
        &self.noise
    }

    pub fn dim(&self) -> usize {
        self.params.dim
    }

    /// Mean per-pair loss of each epoch.
    pub fn epoch_loss(&self) -> &[f64] {
        &self.epoch_loss
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_vector(&self, id: &str) -> Option<&[f64]> {
        let i = self.doc_ids.iter().position(|d| d == id)?;
        Some(&self.doc_vectors[i * self.dim()..(i + 1) * self.dim()])
    }

    pub fn word_vector(&self, token: &str) -> Option<&[f64]> {
        let i = self.vocab.index_of(token)?;
        Some(&self.word_vectors[i * self.dim()..(i + 1) * self.dim()])
    }

    /// Infers a vector for a document with the word vectors frozen. Returns
    /// `None` when the document has no in-vocabulary tokens.
    pub fn infer_vector(&self, doc: &Document, infer_epochs: usize, seed: u64) -> Option<Vec<f64>> {
        let tokens = token_ids(doc, &self.vocab);
        if tokens.is_empty() {
            return None;
        }
        let dim = self.dim();
        let mut rng = seed::rng(seed);
        let mut vector = init_vector(&mut rng, dim);
        let mut words = self.word_vectors.clone();
        let mut trainer = Trainer {
            dim,
            negatives: self.params.negatives,
            noise: &self.noise,
            keep_prob: &self.keep_prob,
            scratch: vec![0.0; dim],
            sampled: Vec::with_capacity(self.params.negatives),
        };
        let epochs = infer_epochs.max(1);
        for epoch in 0..epochs {
            let lr = learning_rate(self.params.learning_rate, epoch as f64 / epochs as f64);
            trainer.pass(&mut vector, &mut words, &tokens, lr, false, &mut rng);
        }
        Some(vector)
    }

    /// The co-trained document vectors, L2-normalized.
    pub fn embedding_matrix(&self) -> Result<EmbeddingMatrix> {
        let mut m = EmbeddingMatrix::from_rows(
            Backend::Doc2vec,
            self.dim(),
            self.doc_ids.clone(),
            self.doc_vectors.clone(),
            false,
        )?;
        m.normalize();
        Ok(m)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        artifact::create_dir(dir)?;
        let dim = self.dim();
        let doc_vectors = artifact::write_f32_matrix(
            dir,
            "doc_vectors.f32",
            self.doc_ids.len(),
            dim,
            &self.doc_vectors,
        )?;
        let word_vectors = artifact::write_f32_matrix(
            dir,
            "word_vectors.f32",
            self.vocab.len(),
            dim,
            &self.word_vectors,
        )?;
        let ids_path = dir.join("doc_ids.txt");
        std::fs::write(&ids_path, self.doc_ids.join("\n") + "\n")
            .map_err(|e| Error::io(&ids_path, e))?;
        artifact::write_json(&dir.join("vocab.json"), &self.vocab)?;
        artifact::write_json(
            &dir.join("meta.json"),
            &Doc2VecMeta {
                format_version: FORMAT_VERSION,
                backend: Backend::Doc2vec,
                params: self.params.clone(),
                dim,
                seed: self.params.seed,
                doc_vectors,
                word_vectors,
                doc_ids_file: "doc_ids.txt".into(),
                vocab_file: "vocab.json".into(),
                epoch_loss: self.epoch_loss.clone(),
            },
        )
    }

    /// Loads a model written by [`Doc2VecModel::write_dir`]; values come back
    /// at `f32` precision.
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let meta: Doc2VecMeta = artifact::read_json(&dir.join("meta.json"), "embed")?;
        let vocab: Vocabulary =
            artifact::read_json::<Vocabulary>(&dir.join(&meta.vocab_file), "embed")?.reindex();
        let doc_ids: Vec<String> = artifact::read_text(&dir.join(&meta.doc_ids_file), "embed")?
            .lines()
            .map(str::to_string)
            .collect();
        let doc_vectors = artifact::read_f32_matrix(dir, &meta.doc_vectors, "embed")?;
        let word_vectors = artifact::read_f32_matrix(dir, &meta.word_vectors, "embed")?;
        if meta.word_vectors.rows != vocab.len() || meta.doc_vectors.rows != doc_ids.len() {
            return Err(Error::CorruptArtifact {
                path: dir.join("meta.json"),
                message: "matrix shapes disagree with vocabulary or id list".into(),
            });
        }
        Ok(Doc2VecModel {
            noise: NoiseDistribution::new(&vocab),
            keep_prob: keep_probabilities(&vocab, meta.params.subsample),
            params: meta.params,
            vocab,
            doc_ids,
            doc_vectors,
            word_vectors,
            epoch_loss: meta.epoch_loss,
        })
    }
}
