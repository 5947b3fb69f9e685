//! Masked-validation grid search on a preset, showing the leading combos and
//! the held-out test confirmation of the winner.

use cluster_augment::pipeline::{embed, prepare, tune, PipelineConfig};
use cluster_augment::synthgen::{generate, SyntheticSpec};

fn fmt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.3}"))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let preset = std::env::args().nth(1).unwrap_or_else(|| "sep2".into());
    let (corpus, _) = generate(&SyntheticSpec::preset(&preset).ok_or("unknown preset")?)?;
    let config = PipelineConfig::new("-");
    let (emb, _) = embed(&corpus, &config.embedding, 0)?;

    for goal in corpus.goals() {
        let prepared = prepare(&corpus, &config, goal, 0)?;
        let tuned = tune(&config, &prepared, &emb, goal, 0)?;

        let mut ranked: Vec<_> = tuned
            .validation
            .combos
            .iter()
            .filter(|c| c.is_eligible(config.tuning.min_coverage))
            .collect();
        ranked.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
        println!(
            "{goal}: {} combos, {} eligible",
            tuned.validation.combos.len(),
            ranked.len()
        );
        println!(
            "  {:>4} {:>6} {:>6}  {:>6} {:>6} {:>6}",
            "K", "radius", "thresh", "acc", "sens", "cov"
        );
        for c in ranked.iter().take(8) {
            println!(
                "  {:>4} {:>6} {:>6}  {:>6} {:>6} {:>6.2}",
                c.params.clusters,
                c.params.radius_pct,
                c.params.threshold_pct,
                fmt(c.accuracy),
                fmt(c.sensitivity),
                c.coverage
            );
        }
        let best = &tuned.validation.best.params;
        println!(
            "  selected K={} radius={} threshold={}: test accuracy {} sensitivity {} coverage {:.2}",
            best.clusters,
            best.radius_pct,
            best.threshold_pct,
            fmt(tuned.test.accuracy),
            fmt(tuned.test.sensitivity),
            tuned.test.coverage
        );
    }
    Ok(())
}
