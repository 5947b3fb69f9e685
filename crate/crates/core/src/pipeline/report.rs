//! Cross-goal reports rendered purely from stored goal artifacts.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::stages::{read_augmented, read_bootstrap, read_tuned, Layout};
use crate::artifact;
use crate::classifier::{write_comparison_csv, BoxStats, ComparisonRow};
use crate::error::{Error, Result};
use crate::tuning::{write_grid_csv, ValidationReport};

#[derive(Serialize)]
struct TuningRow<'a> {
    goal: &'a str,
    clusters: usize,
    distance_pct: f64,
    threshold_pct: f64,
    accuracy: Option<f64>,
    sensitivity: Option<f64>,
    coverage: f64,
}

#[derive(Serialize)]
struct TestingRow<'a> {
    goal: &'a str,
    accuracy: Option<f64>,
    sensitivity: Option<f64>,
    coverage: f64,
    validation_accuracy: Option<f64>,
    validation_sensitivity: Option<f64>,
}

#[derive(Serialize)]
struct AugmentationRow<'a> {
    goal: &'a str,
    original_0: usize,
    original_1: usize,
    synthetic_0: usize,
    synthetic_1: usize,
    total_0: usize,
    total_1: usize,
}

#[derive(Serialize)]
struct BoxRow<'a> {
    goal: &'a str,
    arm: &'static str,
    metric: &'static str,
    min: f64,
    q1: f64,
    median: f64,
    q3: f64,
    max: f64,
    mean: f64,
}

fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::MissingArtifact { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Goal names with a directory under the run, sorted.
pub fn discover_goals(layout: &Layout) -> Result<Vec<String>> {
    let dir = layout.goals();
    let entries = std::fs::read_dir(&dir).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact {
            path: dir.clone(),
            producer: "tune",
        },
        _ => Error::io(&dir, e),
    })?;
    let mut goals = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&dir, e))?;
        let validation = entry.path().join("validation.json");
        if validation.exists() {
            let report: ValidationReport = artifact::read_json(&validation, "tune")?;
            goals.push(report.goal);
        }
    }
    goals.sort();
    Ok(goals)
}

/// Writes `grid.csv`, `tuning.csv`, `testing.csv`, `augmentation.csv`,
/// `comparison.csv` and `boxplot.csv` under the reports directory for the
/// given goals. Goals missing an upstream artifact are left out of the
/// corresponding table.
pub fn render_reports(layout: &Layout, goals: &[String]) -> Result<Vec<PathBuf>> {
    let mut tuned = Vec::new();
    let mut augmented = Vec::new();
    let mut boot = Vec::new();
    for goal in goals {
        if let Some(t) = optional(read_tuned(layout, goal))? {
            tuned.push(t);
        }
        if let Some(a) = optional(read_augmented(layout, goal))? {
            augmented.push(a.report);
        }
        if let Some(b) = optional(read_bootstrap(layout, goal))? {
            boot.push(b);
        }
    }
    if tuned.is_empty() {
        let first = goals
            .first()
            .map(|g| layout.validation(g))
            .unwrap_or_else(|| layout.goals());
        return Err(Error::MissingArtifact {
            path: first,
            producer: "tune",
        });
    }

    let dir = layout.reports();
    artifact::create_dir(&dir)?;
    let path = |name: &str| dir.join(name);

    let validations: Vec<&ValidationReport> = tuned.iter().map(|t| &t.validation).collect();
    write_grid_csv(&path("grid.csv"), &validations)?;

    let tuning: Vec<TuningRow> = tuned
        .iter()
        .map(|t| {
            let b = &t.validation.best;
            TuningRow {
                goal: &t.validation.goal,
                clusters: b.params.clusters,
                distance_pct: b.params.radius_pct,
                threshold_pct: b.params.threshold_pct,
                accuracy: b.accuracy,
                sensitivity: b.sensitivity,
                coverage: b.coverage,
            }
        })
        .collect();
    write_rows(&path("tuning.csv"), &[], &tuning)?;

    let testing: Vec<TestingRow> = tuned
        .iter()
        .map(|t| TestingRow {
            goal: &t.test.goal,
            accuracy: t.test.accuracy,
            sensitivity: t.test.sensitivity,
            coverage: t.test.coverage,
            validation_accuracy: t.test.validation_accuracy,
            validation_sensitivity: t.test.validation_sensitivity,
        })
        .collect();
    write_rows(&path("testing.csv"), &[], &testing)?;

    let aug_rows: Vec<AugmentationRow> = augmented
        .iter()
        .map(|r| AugmentationRow {
            goal: &r.goal,
            original_0: r.after.original_0,
            original_1: r.after.original_1,
            synthetic_0: r.after.synthetic_0,
            synthetic_1: r.after.synthetic_1,
            total_0: r.after.total_0(),
            total_1: r.after.total_1(),
        })
        .collect();
    write_rows(
        &path("augmentation.csv"),
        &[
            "goal",
            "original_0",
            "original_1",
            "synthetic_0",
            "synthetic_1",
            "total_0",
            "total_1",
        ],
        &aug_rows,
    )?;

    let comparison: Vec<ComparisonRow> = boot.iter().map(ComparisonRow::from).collect();
    write_comparison_csv(&path("comparison.csv"), &comparison)?;

    let mut boxes = Vec::new();
    for r in &boot {
        for (arm, samples) in [("original", &r.original), ("augmented", &r.augmented)] {
            for (metric, stats) in [
                ("accuracy", samples.accuracy_box),
                ("sensitivity", samples.sensitivity_box),
            ] {
                let Some(BoxStats {
                    min,
                    q1,
                    median,
                    q3,
                    max,
                    mean,
                }) = stats
                else {
                    continue;
                };
                boxes.push(BoxRow {
                    goal: &r.goal,
                    arm,
                    metric,
                    min,
                    q1,
                    median,
                    q3,
                    max,
                    mean,
                });
            }
        }
    }
    write_rows(
        &path("boxplot.csv"),
        &[
            "goal", "arm", "metric", "min", "q1", "median", "q3", "max", "mean",
        ],
        &boxes,
    )?;

    Ok([
        "grid.csv",
        "tuning.csv",
        "testing.csv",
        "augmentation.csv",
        "comparison.csv",
        "boxplot.csv",
    ]
    .iter()
    .map(|n| path(n))
    .collect())
}
