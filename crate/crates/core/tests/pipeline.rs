use std::fs;
use std::path::{Path, PathBuf};

use cluster_augment::pipeline::{run_pipeline, Layout, PipelineConfig, RunManifest, Status};
use cluster_augment::synthgen::{generate, write_generated, SyntheticSpec};
use cluster_augment::Error;
use serde_json::Value;

fn sep2(dir: &Path) -> PathBuf {
    let (corpus, truth) = generate(&SyntheticSpec::preset("sep2").unwrap()).unwrap();
    write_generated(&dir.join("data"), &corpus, &truth).unwrap();
    dir.join("data/corpus.jsonl")
}

fn quick_config(input: PathBuf, out: PathBuf) -> PipelineConfig {
    let mut config = PipelineConfig::new(input);
    config.output_dir = out;
    config.workers = 1;
    config.tuning.grid.clusters = vec![5, 10];
    config.classifier.epochs = 20;
    config.bootstrap.iterations = 5;
    config
}

fn reports(layout: &Layout) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(layout.reports())
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

fn reused(manifest: &RunManifest) -> Vec<(String, bool)> {
    manifest
        .stages
        .iter()
        .map(|s| {
            (
                format!("{}/{}", s.stage, s.goal.as_deref().unwrap_or("-")),
                s.reused,
            )
        })
        .collect()
}

#[test]
fn second_run_reuses_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(sep2(dir.path()), dir.path().join("run"));
    let layout = Layout::new(&config.output_dir);

    let first = run_pipeline(&config).unwrap();
    assert_eq!(first.status, Status::Complete);
    assert!(first.stages.iter().all(|s| !s.reused));
    first.verify(&layout).unwrap();
    let before = reports(&layout);
    assert_eq!(before.len(), 6);

    let second = run_pipeline(&config).unwrap();
    assert!(
        second.stages.iter().all(|s| s.reused),
        "{:?}",
        reused(&second)
    );
    assert_eq!(reports(&layout), before);
    assert_eq!(RunManifest::read(&layout).unwrap(), second);
}

#[test]
fn changed_settings_rerun_only_downstream_stages() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = quick_config(sep2(dir.path()), dir.path().join("run"));
    run_pipeline(&config).unwrap();

    config.bootstrap.iterations = 6;
    let manifest = run_pipeline(&config).unwrap();
    for (stage, was_reused) in reused(&manifest) {
        assert_eq!(was_reused, !stage.starts_with("bootstrap"), "{stage}");
    }

    config.classifier.epochs = 21;
    let manifest = run_pipeline(&config).unwrap();
    for (stage, was_reused) in reused(&manifest) {
        let downstream = stage.starts_with("train") || stage.starts_with("bootstrap");
        assert_eq!(was_reused, !downstream, "{stage}");
    }
}

#[test]
fn tampered_artifact_is_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let config = quick_config(sep2(dir.path()), dir.path().join("run"));
    let layout = Layout::new(&config.output_dir);
    run_pipeline(&config).unwrap();

    let best = layout.best("g1");
    let original = fs::read(&best).unwrap();
    fs::write(&best, b"{}").unwrap();
    let manifest = RunManifest::read(&layout).unwrap();
    assert!(matches!(
        manifest.verify(&layout),
        Err(Error::CorruptArtifact { .. })
    ));

    let rerun = run_pipeline(&config).unwrap();
    let tune = rerun.stages.iter().find(|s| s.stage == "tune").unwrap();
    assert!(!tune.reused);
    assert_eq!(fs::read(&best).unwrap(), original);
    rerun.verify(&layout).unwrap();
}

#[test]
fn failing_goal_leaves_a_partial_run() {
    let dir = tempfile::tempdir().unwrap();
    let input = sep2(dir.path());
    // A second goal with only three labeled documents cannot be split.
    let text = fs::read_to_string(&input).unwrap();
    let lines: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            let mut doc: Value = serde_json::from_str(line).unwrap();
            doc["labels"]["rare"] = if i < 3 { Value::from(1) } else { Value::Null };
            doc.to_string()
        })
        .collect();
    fs::write(&input, lines.join("\n") + "\n").unwrap();

    let config = quick_config(input, dir.path().join("run"));
    let manifest = run_pipeline(&config).unwrap();
    assert_eq!(manifest.status, Status::Partial);
    assert_eq!(manifest.goals["g1"].status, Status::Complete);
    let rare = &manifest.goals["rare"];
    assert_eq!(rare.status, Status::Partial);
    assert_eq!(rare.failed_stage.as_deref(), Some("prepare"));
    assert!(rare.cause.is_some());

    let comparison = fs::read_to_string(
        Layout::new(&config.output_dir)
            .reports()
            .join("comparison.csv"),
    )
    .unwrap();
    assert_eq!(comparison.lines().count(), 2, "{comparison}");
    assert!(comparison.lines().nth(1).unwrap().starts_with("g1,"));
}

#[test]
fn empty_goal_list_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = quick_config(sep2(dir.path()), dir.path().join("run"));
    config.goals = Some(Vec::new());
    let err = run_pipeline(&config).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn unknown_goal_fails_the_whole_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = quick_config(sep2(dir.path()), dir.path().join("run"));
    config.goals = Some(vec!["g1".into(), "g9".into()]);
    let err = run_pipeline(&config).unwrap_err();
    assert_ne!(err.exit_code(), 0);
}
