//! Individual pipeline stages. Each computes its result, writes it under the
//! run layout, and has a matching reader so later stages (or a resumed run)
//! can pick it up from disk.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{EmbeddingConfig, PipelineConfig};
use crate::artifact;
use crate::classifier::{bootstrap_eval, train, BootstrapReport, Dataset, TrainedClassifier};
use crate::clustering::{kmeans_fit, ClusterModel};
use crate::corpus::{
    load_corpus, split_labeled, upsample, Corpus, Document, LoadOptions, SplitAssignment,
};
use crate::embedding::{
    build_vocab, tfidf_embed, train_doc2vec, Backend, Doc2VecModel, Doc2VecParams, EmbeddingMatrix,
};
use crate::error::{Error, Result};
use crate::propagation::{augment, clustering_input, AugmentationReport, PropagationParams};
use crate::tuning::{
    grid_search, test_confirm, write_grid_csv, BestRecord, TestReport, ValidationReport,
};

/// Paths of a versioned run directory (`<output_dir>/v1`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    root: PathBuf,
}

fn dir_name(goal: &str) -> String {
    goal.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl Layout {
    pub fn new(output_dir: &Path) -> Self {
        Layout {
            root: output_dir.join(format!("v{}", artifact::FORMAT_VERSION)),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// `path` relative to the root, with `/` separators.
    pub fn relative(&self, path: &Path) -> String {
        let rel = path.strip_prefix(&self.root).unwrap_or(path);
        rel.components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus").join("corpus.jsonl")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings")
    }

    pub fn doc2vec(&self) -> PathBuf {
        self.root.join("doc2vec")
    }

    pub fn goals(&self) -> PathBuf {
        self.root.join("goals")
    }

    pub fn goal(&self, goal: &str) -> PathBuf {
        self.goals().join(dir_name(goal))
    }

    pub fn split(&self, goal: &str) -> PathBuf {
        self.goal(goal).join("split.json")
    }

    pub fn upsampled(&self, goal: &str) -> PathBuf {
        self.goal(goal).join("upsampled.jsonl")
    }

    pub fn clusters(&self, goal: &str) -> PathBuf {
        self.goal(goal).join("clusters")
    }

    pub fn validation(&self, goal: &str) -> PathBuf {
        self.goal(goal).join("validation.json")
    }

    pub fn grid_csv(&self, goal: &str) -> PathBuf {
        self.goal(goal).join("grid.csv")
    }

    pub fn best(&self, goal: &str) -> PathBuf {
        self.goal(goal).join("best.json")
    }

    pub fn test(&self, goal: &str) -> PathBuf {
        self.goal(goal).join("test.json")
    }

    pub fn augmented(&self, goal: &str) -> PathBuf {
        self.goal(goal).join("augmented.jsonl")
    }

    pub fn augmentation(&self, goal: &str) -> PathBuf {
        self.goal(goal).join("augmentation.json")
    }

    pub fn model(&self, goal: &str, arm: Arm) -> PathBuf {
        self.goal(goal)
            .join(format!("classifier_{}.json", arm.name()))
    }

    pub fn bootstrap(&self, goal: &str) -> PathBuf {
        self.goal(goal).join("bootstrap.json")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Original,
    Augmented,
}

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Original => "original",
            Arm::Augmented => "augmented",
        }
    }
}

fn parent_dir(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        artifact::create_dir(p)?;
    }
    Ok(())
}

fn read_corpus_file(path: &Path, producer: &'static str) -> Result<Corpus> {
    if !path.exists() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            producer,
        });
    }
    load_corpus(path, &LoadOptions::default())
}

/// Loads the labeled input and, if configured, the unlabeled one; checks
/// that every requested goal occurs.
pub fn load_inputs(config: &PipelineConfig) -> Result<Corpus> {
    let opts = LoadOptions::default();
    let mut corpus = load_corpus(&config.input.labeled, &opts)?;
    if let Some(path) = &config.input.unlabeled {
        corpus = corpus.merge(load_corpus(path, &opts)?)?;
    }
    if let Some(goals) = &config.goals {
        for goal in goals {
            corpus.require_goal(goal)?;
        }
    }
    Ok(corpus)
}

/// Goals a run processes: the configured list, or every corpus goal.
pub fn resolve_goals(config: &PipelineConfig, corpus: &Corpus) -> Vec<String> {
    config
        .goals
        .clone()
        .unwrap_or_else(|| corpus.goals().to_vec())
}

pub fn write_corpus(layout: &Layout, corpus: &Corpus) -> Result<PathBuf> {
    let path = layout.corpus();
    parent_dir(&path)?;
    corpus.write_jsonl(&path)?;
    Ok(path)
}

pub fn read_corpus(layout: &Layout) -> Result<Corpus> {
    read_corpus_file(&layout.corpus(), "embed")
}

/// Embeds every non-replica document with the configured backend. Values
/// are rounded to `f32` so that a matrix read back from disk is identical.
pub fn embed(
    corpus: &Corpus,
    config: &EmbeddingConfig,
    seed: u64,
) -> Result<(EmbeddingMatrix, Option<Doc2VecModel>)> {
    let (mut matrix, model) = match config.backend {
        Backend::Tfidf => {
            let vocab = build_vocab(corpus, config.min_count)?;
            let projection = (config.projection_dim > 0).then_some(config.projection_dim);
            (tfidf_embed(corpus, &vocab, projection, seed)?, None)
        }
        Backend::Doc2vec => {
            let params = Doc2VecParams {
                seed,
                ..config.doc2vec.clone()
            };
            let model = train_doc2vec(corpus, &params)?;
            (model.embedding_matrix()?, Some(model))
        }
    };
    matrix.round_to_f32();
    Ok((matrix, model))
}

pub fn write_embeddings(
    layout: &Layout,
    matrix: &EmbeddingMatrix,
    model: Option<&Doc2VecModel>,
) -> Result<Vec<PathBuf>> {
    let dir = layout.embeddings();
    artifact::create_dir(&dir)?;
    matrix.write_dir(&dir)?;
    let mut written = vec![
        dir.join("meta.json"),
        dir.join("vectors.f32"),
        dir.join("ids.txt"),
    ];
    if let Some(model) = model {
        let d = layout.doc2vec();
        artifact::create_dir(&d)?;
        model.write_dir(&d)?;
        written.push(d.join("meta.json"));
    }
    Ok(written)
}

pub fn read_embeddings(layout: &Layout) -> Result<EmbeddingMatrix> {
    EmbeddingMatrix::read_dir(&layout.embeddings())
}

/// The goal's split and its (optionally upsampled) clustering corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub split: SplitAssignment,
    pub corpus: Corpus,
}

pub fn prepare(
    corpus: &Corpus,
    config: &PipelineConfig,
    goal: &str,
    seed: u64,
) -> Result<Prepared> {
    corpus.require_goal(goal)?;
    let split = split_labeled(corpus, goal, seed)?;
    let corpus = if config.upsample.enabled {
        upsample(corpus, goal, &split, &config.upsample.config())?
    } else {
        corpus.clone()
    };
    Ok(Prepared { split, corpus })
}

pub fn write_prepared(layout: &Layout, goal: &str, prepared: &Prepared) -> Result<Vec<PathBuf>> {
    let (split, up) = (layout.split(goal), layout.upsampled(goal));
    parent_dir(&split)?;
    prepared.split.write_json(&split)?;
    prepared.corpus.write_jsonl(&up)?;
    Ok(vec![split, up])
}

pub fn read_prepared(layout: &Layout, goal: &str) -> Result<Prepared> {
    let split_path = layout.split(goal);
    if !split_path.exists() {
        return Err(Error::MissingArtifact {
            path: split_path,
            producer: "tune",
        });
    }
    Ok(Prepared {
        split: SplitAssignment::read_json(&split_path)?,
        corpus: read_corpus_file(&layout.upsampled(goal), "tune")?,
    })
}

/// Reads the prepared split if present, otherwise prepares and writes it.
pub fn ensure_prepared(
    layout: &Layout,
    config: &PipelineConfig,
    corpus: &Corpus,
    goal: &str,
    seed: u64,
) -> Result<Prepared> {
    if layout.split(goal).exists() && layout.upsampled(goal).exists() {
        return read_prepared(layout, goal);
    }
    let prepared = prepare(corpus, config, goal, seed)?;
    write_prepared(layout, goal, &prepared)?;
    Ok(prepared)
}

/// Fits k-means on the goal's clustering input and writes the model.
pub fn cluster(
    layout: &Layout,
    config: &PipelineConfig,
    prepared: &Prepared,
    embeddings: &EmbeddingMatrix,
    goal: &str,
    k: usize,
    seed: u64,
) -> Result<ClusterModel> {
    let input = clustering_input(&prepared.corpus, embeddings, &prepared.split, goal, None)?;
    let model = kmeans_fit(&input.points, k, seed, &config.tuning.kmeans)?;
    let dir = layout.clusters(goal);
    artifact::create_dir(&dir)?;
    model.write_dir(&dir)?;
    Ok(model)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tuned {
    pub validation: ValidationReport,
    pub test: TestReport,
}

pub fn tune(
    config: &PipelineConfig,
    prepared: &Prepared,
    embeddings: &EmbeddingMatrix,
    goal: &str,
    seed: u64,
) -> Result<Tuned> {
    let validation = grid_search(
        &prepared.corpus,
        &prepared.split,
        embeddings,
        &config.tuning,
        goal,
        seed,
    )?;
    let test = test_confirm(
        &prepared.corpus,
        &prepared.split,
        embeddings,
        &validation,
        goal,
        seed,
        &config.tuning.kmeans,
    )?;
    Ok(Tuned { validation, test })
}

pub fn write_tuned(layout: &Layout, goal: &str, tuned: &Tuned) -> Result<Vec<PathBuf>> {
    let paths = [
        layout.validation(goal),
        layout.grid_csv(goal),
        layout.best(goal),
        layout.test(goal),
    ];
    parent_dir(&paths[0])?;
    artifact::write_json(&paths[0], &tuned.validation)?;
    write_grid_csv(&paths[1], &[&tuned.validation])?;
    artifact::write_json(&paths[2], &BestRecord::from(&tuned.validation))?;
    artifact::write_json(&paths[3], &tuned.test)?;
    Ok(paths.to_vec())
}

pub fn read_tuned(layout: &Layout, goal: &str) -> Result<Tuned> {
    Ok(Tuned {
        validation: artifact::read_json(&layout.validation(goal), "tune")?,
        test: artifact::read_json(&layout.test(goal), "tune")?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub corpus: Corpus,
    pub report: AugmentationReport,
}

pub fn augment_goal(
    config: &PipelineConfig,
    prepared: &Prepared,
    embeddings: &EmbeddingMatrix,
    params: &PropagationParams,
    goal: &str,
    seed: u64,
) -> Result<Augmented> {
    let (corpus, report) = augment(
        &prepared.corpus,
        embeddings,
        &prepared.split,
        params,
        goal,
        seed,
        &config.tuning.kmeans,
    )?;
    Ok(Augmented { corpus, report })
}

pub fn write_augmented(layout: &Layout, goal: &str, augmented: &Augmented) -> Result<Vec<PathBuf>> {
    let (corpus, report) = (layout.augmented(goal), layout.augmentation(goal));
    parent_dir(&corpus)?;
    augmented.corpus.write_jsonl(&corpus)?;
    artifact::write_json(&report, &augmented.report)?;
    Ok(vec![corpus, report])
}

pub fn read_augmented(layout: &Layout, goal: &str) -> Result<Augmented> {
    Ok(Augmented {
        corpus: read_corpus_file(&layout.augmented(goal), "augment")?,
        report: artifact::read_json(&layout.augmentation(goal), "augment")?,
    })
}

/// Originally labeled documents, replicas excluded, in id order.
fn original_docs<'a>(corpus: &'a Corpus, goal: &str) -> Vec<&'a Document> {
    let mut docs: Vec<&Document> = corpus
        .documents()
        .iter()
        .filter(|d| !d.is_replica() && d.label(goal).original().is_some())
        .collect();
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    docs
}

/// Trains one classifier per arm on all available labels: originals for
/// the original arm, originals plus synthetic labels for the augmented one.
pub fn train_arms(
    config: &PipelineConfig,
    augmented: &Corpus,
    embeddings: &EmbeddingMatrix,
    goal: &str,
    seed: u64,
) -> Result<(TrainedClassifier, TrainedClassifier)> {
    let cfg = crate::classifier::ClassifierConfig {
        seed,
        ..config.classifier.clone()
    };
    let originals = original_docs(augmented, goal);
    let mut with_synthetic = originals.clone();
    with_synthetic.extend(
        augmented
            .documents()
            .iter()
            .filter(|d| !d.is_replica() && d.label(goal).synthetic().is_some()),
    );
    let original = train(&Dataset::from_docs(&originals, embeddings, goal)?, &cfg)?;
    let augmented = train(
        &Dataset::from_docs(&with_synthetic, embeddings, goal)?,
        &cfg,
    )?;
    Ok((original, augmented))
}

pub fn write_models(
    layout: &Layout,
    goal: &str,
    models: &(TrainedClassifier, TrainedClassifier),
) -> Result<Vec<PathBuf>> {
    let paths = [
        layout.model(goal, Arm::Original),
        layout.model(goal, Arm::Augmented),
    ];
    parent_dir(&paths[0])?;
    artifact::write_json(&paths[0], &models.0)?;
    artifact::write_json(&paths[1], &models.1)?;
    Ok(paths.to_vec())
}

pub fn read_model(layout: &Layout, goal: &str, arm: Arm) -> Result<TrainedClassifier> {
    artifact::read_json(&layout.model(goal, arm), "train")
}

pub fn evaluate(
    config: &PipelineConfig,
    original: &Corpus,
    augmented: &Corpus,
    embeddings: &EmbeddingMatrix,
    goal: &str,
    seed: u64,
) -> Result<BootstrapReport> {
    bootstrap_eval(
        original,
        augmented,
        embeddings,
        goal,
        &config.classifier,
        &config.bootstrap,
        seed,
    )
}

pub fn write_bootstrap(
    layout: &Layout,
    goal: &str,
    report: &BootstrapReport,
) -> Result<Vec<PathBuf>> {
    let path = layout.bootstrap(goal);
    parent_dir(&path)?;
    artifact::write_json(&path, report)?;
    Ok(vec![path])
}

pub fn read_bootstrap(layout: &Layout, goal: &str) -> Result<BootstrapReport> {
    artifact::read_json(&layout.bootstrap(goal), "evaluate")
}
