//! End-to-end runs: load and embed once, then per goal split, upsample,
//! tune, augment, train and bootstrap-compare, writing every intermediate
//! result under `<output_dir>/v1/` together with a run manifest.
//!
//! A stage whose inputs and settings are unchanged since the previous run
//! (same stage key in the old manifest, artifacts present with matching
//! digests) is loaded from disk instead of recomputed.

mod config;
mod report;
mod stages;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact;
use crate::classifier::ComparisonRow;
use crate::corpus::{Corpus, LabelCounts};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::propagation::PropagationTotals;
use crate::seed;
use crate::tuning::BestRecord;

pub use config::{EmbeddingConfig, InputConfig, PipelineConfig, UpsampleSettings};
pub use report::{discover_goals, render_reports};
pub use stages::*;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the versioned run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<String>,
    pub seed: u64,
    /// Digest of everything the stage depends on.
    pub key: String,
    pub reused: bool,
    pub artifacts: Vec<ArtifactRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Complete,
    Partial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub coverage: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationSummary {
    pub totals: PropagationTotals,
    pub before: LabelCounts,
    pub after: LabelCounts,
    pub conserved: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalSummary {
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
    pub best: Option<BestRecord>,
    pub test: Option<TestSummary>,
    pub augmentation: Option<AugmentationSummary>,
    pub comparison: Option<ComparisonRow>,
}

impl GoalSummary {
    fn new() -> Self {
        GoalSummary {
            status: Status::Partial,
            failed_stage: None,
            cause: None,
            best: None,
            test: None,
            augmentation: None,
            comparison: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub format_version: u32,
    pub config_hash: String,
    pub config: PipelineConfig,
    /// Input path to SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    /// `stage` or `stage/goal` to the seed it ran with.
    pub seeds: BTreeMap<String, u64>,
    pub stages: Vec<StageRecord>,
    pub goals: BTreeMap<String, GoalSummary>,
    pub reports: Vec<ArtifactRecord>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl RunManifest {
    pub fn read(layout: &Layout) -> Result<Self> {
        artifact::read_json(&layout.manifest(), "run")
    }

    /// Checks that every recorded artifact exists with its recorded digest.
    pub fn verify(&self, layout: &Layout) -> Result<()> {
        let records = self
            .stages
            .iter()
            .flat_map(|s| &s.artifacts)
            .chain(&self.reports);
        for record in records {
            let path = layout.root().join(&record.path);
            let digest = artifact::file_digest(&path)?;
            if digest != record.sha256 {
                return Err(Error::CorruptArtifact {
                    path,
                    message: "digest differs from the manifest".into(),
                });
            }
        }
        Ok(())
    }

    pub fn failed_goals(&self) -> impl Iterator<Item = (&String, &GoalSummary)> {
        self.goals
            .iter()
            .filter(|(_, g)| g.status != Status::Complete)
    }
}

/// Seed of a stochastic stage, derived from the master seed, stage name and
/// goal.
pub fn stage_seed(master: u64, stage: &str, goal: Option<&str>) -> u64 {
    match goal {
        Some(g) => seed::derive(master, &[stage, g]),
        None => seed::derive(master, &[stage]),
    }
}

fn stage_key(
    stage: &str,
    goal: Option<&str>,
    seed: u64,
    settings: &impl Serialize,
    parents: &[&str],
) -> String {
    let value = serde_json::json!({
        "stage": stage,
        "goal": goal,
        "seed": seed,
        "settings": settings,
        "parents": parents,
        "format": artifact::FORMAT_VERSION,
    });
    artifact::sha256_bytes(&serde_json::to_vec(&value).expect("key serializes"))
}

struct Recorder<'a> {
    layout: &'a Layout,
    previous: Option<&'a RunManifest>,
}

impl Recorder<'_> {
    fn reusable(&self, stage: &str, goal: Option<&str>, key: &str) -> bool {
        let Some(prev) = self.previous else {
            return false;
        };
        prev.stages
            .iter()
            .find(|s| s.stage == stage && s.goal.as_deref() == goal)
            .is_some_and(|s| {
                s.key == key
                    && s.artifacts.iter().all(|a| {
                        artifact::file_digest(&self.layout.root().join(&a.path))
                            .is_ok_and(|d| d == a.sha256)
                    })
            })
    }

    fn record(
        &self,
        stage: &str,
        goal: Option<&str>,
        seed: u64,
        key: String,
        reused: bool,
        paths: &[PathBuf],
    ) -> Result<StageRecord> {
        let artifacts = if reused {
            self.previous
                .and_then(|p| {
                    p.stages
                        .iter()
                        .find(|s| s.stage == stage && s.goal.as_deref() == goal)
                })
                .map(|s| s.artifacts.clone())
                .unwrap_or_default()
        } else {
            paths
                .iter()
                .map(|p| {
                    Ok(ArtifactRecord {
                        path: self.layout.relative(p),
                        sha256: artifact::file_digest(p)?,
                    })
                })
                .collect::<Result<_>>()?
        };
        Ok(StageRecord {
            stage: stage.to_string(),
            goal: goal.map(str::to_string),
            seed,
            key,
            reused,
            artifacts,
        })
    }

    /// Loads the stage from disk when reusable, otherwise computes and
    /// writes it.
    #[allow(clippy::too_many_arguments)]
    fn stage<T>(
        &self,
        records: &mut Vec<StageRecord>,
        stage: &str,
        goal: Option<&str>,
        seed: u64,
        key: String,
        load: impl FnOnce() -> Result<T>,
        compute: impl FnOnce() -> Result<(T, Vec<PathBuf>)>,
    ) -> Result<T> {
        let reuse = self.reusable(stage, goal, &key);
        if reuse {
            if let Ok(value) = load() {
                records.push(self.record(stage, goal, seed, key, true, &[])?);
                return Ok(value);
            }
        }
        let (value, paths) = compute()?;
        records.push(self.record(stage, goal, seed, key, false, &paths)?);
        Ok(value)
    }
}

struct GoalRun {
    records: Vec<StageRecord>,
    summary: GoalSummary,
    seeds: Vec<(String, u64)>,
}

fn wrap<'a>(stage: &'a str, goal: &'a str) -> impl Fn(Error) -> Error + 'a {
    move |e| Error::Stage {
        stage: stage.to_string(),
        goal: goal.to_string(),
        cause: Box::new(e),
    }
}

fn run_goal(
    rec: &Recorder,
    config: &PipelineConfig,
    corpus: &Corpus,
    embeddings: &EmbeddingMatrix,
    parents: (&str, &str),
    goal: &str,
) -> GoalRun {
    let mut run = GoalRun {
        records: Vec::new(),
        summary: GoalSummary::new(),
        seeds: Vec::new(),
    };
    if let Err(e) = run_goal_stages(rec, config, corpus, embeddings, parents, goal, &mut run) {
        let (stage, cause) = match e {
            Error::Stage { stage, cause, .. } => (stage, cause.to_string()),
            other => ("unknown".to_string(), other.to_string()),
        };
        run.summary.failed_stage = Some(stage);
        run.summary.cause = Some(cause);
    } else {
        run.summary.status = Status::Complete;
    }
    run
}

fn run_goal_stages(
    rec: &Recorder,
    config: &PipelineConfig,
    corpus: &Corpus,
    embeddings: &EmbeddingMatrix,
    (load_key, embed_key): (&str, &str),
    goal: &str,
    run: &mut GoalRun,
) -> Result<()> {
    let layout = rec.layout;
    let g = Some(goal);
    let mut seed_for = |stage: &str| {
        let s = stage_seed(config.seed, stage, g);
        run.seeds.push((format!("{stage}/{goal}"), s));
        s
    };
    let (split_seed, tune_seed, aug_seed, train_seed, boot_seed) = (
        seed_for("split"),
        seed_for("tune"),
        seed_for("augment"),
        seed_for("train"),
        seed_for("bootstrap"),
    );
    let records = &mut run.records;

    let key = stage_key("prepare", g, split_seed, &config.upsample, &[load_key]);
    let prepare_key = key.clone();
    let prepared = rec
        .stage(
            records,
            "prepare",
            g,
            split_seed,
            key,
            || read_prepared(layout, goal),
            || {
                let p = prepare(corpus, config, goal, split_seed)?;
                let paths = write_prepared(layout, goal, &p)?;
                Ok((p, paths))
            },
        )
        .map_err(wrap("prepare", goal))?;

    let key = stage_key(
        "tune",
        g,
        tune_seed,
        &config.tuning,
        &[&prepare_key, embed_key],
    );
    let tune_key = key.clone();
    let tuned = rec
        .stage(
            records,
            "tune",
            g,
            tune_seed,
            key,
            || read_tuned(layout, goal),
            || {
                let t = tune(config, &prepared, embeddings, goal, tune_seed)?;
                let paths = write_tuned(layout, goal, &t)?;
                Ok((t, paths))
            },
        )
        .map_err(wrap("tune", goal))?;
    run.summary.best = Some(BestRecord::from(&tuned.validation));
    run.summary.test = Some(TestSummary {
        accuracy: tuned.test.accuracy,
        sensitivity: tuned.test.sensitivity,
        coverage: tuned.test.coverage,
    });

    let params = tuned.validation.best.params;
    let key = stage_key(
        "augment",
        g,
        aug_seed,
        &(params, &config.tuning.kmeans),
        &[&tune_key],
    );
    let augment_key = key.clone();
    let augmented = rec
        .stage(
            records,
            "augment",
            g,
            aug_seed,
            key,
            || read_augmented(layout, goal),
            || {
                let a = augment_goal(config, &prepared, embeddings, &params, goal, aug_seed)?;
                let paths = write_augmented(layout, goal, &a)?;
                Ok((a, paths))
            },
        )
        .map_err(wrap("augment", goal))?;
    let report = &augmented.report;
    run.summary.augmentation = Some(AugmentationSummary {
        totals: report.totals.clone(),
        before: report.before,
        after: report.after,
        conserved: report.is_conserved(),
    });

    let key = stage_key("train", g, train_seed, &config.classifier, &[&augment_key]);
    rec.stage(
        records,
        "train",
        g,
        train_seed,
        key,
        || Ok(()),
        || {
            let models = train_arms(config, &augmented.corpus, embeddings, goal, train_seed)?;
            let paths = write_models(layout, goal, &models)?;
            Ok(((), paths))
        },
    )
    .map_err(wrap("train", goal))?;

    let key = stage_key(
        "bootstrap",
        g,
        boot_seed,
        &(&config.classifier, &config.bootstrap),
        &[&augment_key],
    );
    let boot = rec
        .stage(
            records,
            "bootstrap",
            g,
            boot_seed,
            key,
            || read_bootstrap(layout, goal),
            || {
                let b = evaluate(
                    config,
                    corpus,
                    &augmented.corpus,
                    embeddings,
                    goal,
                    boot_seed,
                )?;
                let paths = write_bootstrap(layout, goal, &b)?;
                Ok((b, paths))
            },
        )
        .map_err(wrap("bootstrap", goal))?;
    run.summary.comparison = Some(ComparisonRow::from(&boot));
    Ok(())
}

fn input_digests(config: &PipelineConfig) -> Result<BTreeMap<String, String>> {
    let mut inputs = BTreeMap::new();
    let paths = std::iter::once(&config.input.labeled).chain(config.input.unlabeled.as_ref());
    for p in paths {
        inputs.insert(p.display().to_string(), artifact::file_digest(p)?);
    }
    Ok(inputs)
}

fn write_manifest(layout: &Layout, manifest: &RunManifest) -> Result<()> {
    artifact::create_dir(layout.root())?;
    artifact::write_json(&layout.manifest(), manifest)
}

/// Runs every stage for every goal and returns the manifest, which is also
/// written to `<output_dir>/v1/manifest.json`.
///
/// A failing goal does not stop the others; the manifest then has status
/// `partial` and names the failing stage and cause. Failures before the
/// per-goal stages (loading, embedding) are returned as errors after the
/// manifest is written.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunManifest> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", config.workers)))?;
    pool.install(|| run_in_pool(config))
}

fn run_in_pool(config: &PipelineConfig) -> Result<RunManifest> {
    let layout = Layout::new(&config.output_dir);
    let previous = RunManifest::read(&layout).ok();
    let rec = Recorder {
        layout: &layout,
        previous: previous.as_ref(),
    };
    let inputs = input_digests(config)?;
    let mut manifest = RunManifest {
        tool_version: TOOL_VERSION.to_string(),
        format_version: artifact::FORMAT_VERSION,
        config_hash: config.digest(),
        config: config.clone(),
        inputs: inputs.clone(),
        seeds: BTreeMap::new(),
        stages: Vec::new(),
        goals: BTreeMap::new(),
        reports: Vec::new(),
        status: Status::Partial,
        failure: None,
    };

    let embed_seed = stage_seed(config.seed, "embed", None);
    manifest.seeds.insert("embed".into(), embed_seed);
    let global = (|| -> Result<(Corpus, EmbeddingMatrix, String, String)> {
        let load_key = stage_key("load", None, 0, &(&inputs, &config.goals), &[]);
        let corpus = rec.stage(
            &mut manifest.stages,
            "load",
            None,
            0,
            load_key.clone(),
            || read_corpus(&layout),
            || {
                let c = load_inputs(config)?;
                let path = write_corpus(&layout, &c)?;
                Ok((c, vec![path]))
            },
        )?;
        let embed_key = stage_key("embed", None, embed_seed, &config.embedding, &[&load_key]);
        let embeddings = rec.stage(
            &mut manifest.stages,
            "embed",
            None,
            embed_seed,
            embed_key.clone(),
            || read_embeddings(&layout),
            || {
                let (m, model) = embed(&corpus, &config.embedding, embed_seed)?;
                let paths = write_embeddings(&layout, &m, model.as_ref())?;
                Ok((m, paths))
            },
        )?;
        Ok((corpus, embeddings, load_key, embed_key))
    })();
    let (corpus, embeddings, load_key, embed_key) = match global {
        Ok(v) => v,
        Err(e) => {
            let stage = if manifest.stages.is_empty() {
                "load"
            } else {
                "embed"
            };
            manifest.failure = Some(format!("{stage}: {e}"));
            write_manifest(&layout, &manifest)?;
            return Err(Error::Stage {
                stage: stage.to_string(),
                goal: String::new(),
                cause: Box::new(e),
            });
        }
    };

    let goals = resolve_goals(config, &corpus);
    let runs: Vec<GoalRun> = goals
        .par_iter()
        .map(|goal| {
            run_goal(
                &rec,
                config,
                &corpus,
                &embeddings,
                (&load_key, &embed_key),
                goal,
            )
        })
        .collect();
    for (goal, run) in goals.iter().zip(runs) {
        manifest.stages.extend(run.records);
        manifest.seeds.extend(run.seeds);
        manifest.goals.insert(goal.clone(), run.summary);
    }

    let finished: Vec<String> = manifest
        .goals
        .iter()
        .filter(|(_, g)| g.best.is_some())
        .map(|(k, _)| k.clone())
        .collect();
    if !finished.is_empty() {
        for path in render_reports(&layout, &finished)? {
            manifest.reports.push(ArtifactRecord {
                path: layout.relative(&path),
                sha256: artifact::file_digest(&path)?,
            });
        }
    }
    manifest.status = if manifest.failed_goals().next().is_none() {
        Status::Complete
    } else {
        Status::Partial
    };
    write_manifest(&layout, &manifest)?;
    Ok(manifest)
}
