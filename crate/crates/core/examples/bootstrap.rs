//! Trains the original and augmented arms under a paired bootstrap and runs
//! Welch's t-test on the per-iteration metrics.
//!
//! ```text
//! cargo run --release --example bootstrap -- sep2-imbalanced 50
//! ```

use cluster_augment::classifier::bootstrap_eval;
use cluster_augment::pipeline::{augment_goal, embed, prepare, tune, PipelineConfig};
use cluster_augment::synthgen::{generate, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "sep2-imbalanced".into());
    let iterations = args.next().map(|s| s.parse()).transpose()?.unwrap_or(30);

    let (corpus, _) = generate(&SyntheticSpec::preset(&preset).ok_or("unknown preset")?)?;
    let mut config = PipelineConfig::new("-");
    config.bootstrap.iterations = iterations;
    let (emb, _) = embed(&corpus, &config.embedding, 0)?;

    for goal in corpus.goals() {
        let prepared = prepare(&corpus, &config, goal, 0)?;
        let tuned = tune(&config, &prepared, &emb, goal, 0)?;
        let augmented = augment_goal(
            &config,
            &prepared,
            &emb,
            &tuned.validation.best.params,
            goal,
            0,
        )?;
        let report = bootstrap_eval(
            &corpus,
            &augmented.corpus,
            &emb,
            goal,
            &config.classifier,
            &config.bootstrap,
            0,
        )?;

        println!(
            "{goal}: {} iterations over {} labeled documents and {} synthetic",
            report.iterations, report.universe, report.synthetic_pool
        );
        for (arm, s) in [
            ("original", &report.original),
            ("augmented", &report.augmented),
        ] {
            let sens = s.sensitivity_box.unwrap();
            println!(
                "  {arm:<9} accuracy {:.3}  sensitivity {:.3} (q1 {:.3}, median {:.3}, q3 {:.3})",
                s.mean_accuracy, s.mean_sensitivity, sens.q1, sens.median, sens.q3
            );
        }
        for (metric, test) in [
            ("accuracy", report.accuracy_test),
            ("sensitivity", report.sensitivity_test),
        ] {
            match test {
                Some(t) => println!(
                    "  {metric}: t = {:.3}, df = {:.1}, p = {:.3e}",
                    t.t, t.df, t.p
                ),
                None => println!("  {metric}: both arms constant, no test"),
            }
        }
    }
    Ok(())
}
