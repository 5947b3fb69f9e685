//! Generates a synthetic corpus and runs the whole pipeline on it.
//!
//! ```text
//! cargo run --release --example end_to_end -- sep2-imbalanced 100
//! ```

use std::time::Instant;

use cluster_augment::pipeline::{run_pipeline, PipelineConfig};
use cluster_augment::synthgen::{generate, write_generated, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "sep2-imbalanced".to_string());
    let iterations: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(50);

    let spec = SyntheticSpec::preset(&preset).ok_or("unknown preset")?;
    let dir = tempfile::tempdir()?;
    let (corpus, truth) = generate(&spec)?;
    write_generated(dir.path(), &corpus, &truth)?;

    let mut config = PipelineConfig::new(dir.path().join("corpus.jsonl"));
    config.output_dir = dir.path().join("run");
    config.bootstrap.iterations = iterations;

    let start = Instant::now();
    let manifest = run_pipeline(&config)?;
    println!("{preset}: finished in {:.1?}", start.elapsed());
    for (goal, summary) in &manifest.goals {
        if let Some(cause) = &summary.cause {
            println!(
                "{goal}: failed in {}: {cause}",
                summary.failed_stage.as_deref().unwrap_or("?")
            );
            continue;
        }
        let best = summary.best.as_ref().unwrap();
        println!(
            "{goal}: K={} radius={}% threshold={}%  validation acc={:.3} sens={:.3} coverage={:.2}",
            best.clusters,
            best.distance_pct,
            best.threshold_pct,
            best.accuracy.unwrap_or(f64::NAN),
            best.sensitivity.unwrap_or(f64::NAN),
            best.coverage
        );
        if let Some(aug) = &summary.augmentation {
            println!(
                "{goal}: propagated {} positive / {} negative labels",
                aug.totals.synthetic_1, aug.totals.synthetic_0
            );
        }
        if let Some(row) = &summary.comparison {
            println!(
                "{goal}: original acc={:.3} sens={:.3} | augmented acc={:.3} sens={:.3} | p_acc={:?} p_sens={:?}",
                row.orig_acc, row.orig_sens, row.aug_acc, row.aug_sens, row.p_acc, row.p_sens
            );
        }
    }
    Ok(())
}
