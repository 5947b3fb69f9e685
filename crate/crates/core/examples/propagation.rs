//! Propagates labels on `sep5-noisy` with fixed parameters and checks the
//! synthetic labels against the hidden ground truth.
//!
//! ```text
//! cargo run --example propagation -- 25 25 60
//! ```

use cluster_augment::clustering::KMeansConfig;
use cluster_augment::corpus::split_labeled;
use cluster_augment::pipeline::{embed, EmbeddingConfig};
use cluster_augment::propagation::{augment, PropagationParams};
use cluster_augment::synthgen::{generate, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse())
        .collect::<Result<_, _>>()?;
    let [k, radius, threshold] = args[..] else {
        return Err("usage: propagation K RADIUS THRESHOLD".into());
    };
    let params = PropagationParams::new(k as usize, radius, threshold)?;

    let (corpus, truth) = generate(&SyntheticSpec::preset("sep5-noisy").unwrap())?;
    let (emb, _) = embed(&corpus, &EmbeddingConfig::default(), 0)?;

    for goal in corpus.goals() {
        let split = split_labeled(&corpus, goal, 0)?;
        let (augmented, report) = augment(
            &corpus,
            &emb,
            &split,
            &params,
            goal,
            0,
            &KMeansConfig::default(),
        )?;

        let (mut right, mut total) = (0, 0);
        for doc in augmented.documents() {
            if let Some(v) = doc.label(goal).synthetic() {
                total += 1;
                right += usize::from(u8::from(v) == truth[&doc.id].labels[goal]);
            }
        }
        println!(
            "{goal}: {} clusters, {} skipped; {} synthetic 1 / {} synthetic 0; {right}/{total} agree with ground truth",
            report.clusters.len(),
            report.totals.skipped,
            report.totals.synthetic_1,
            report.totals.synthetic_0,
        );
        for c in report.clusters.iter().filter(|c| c.assigned > 0).take(5) {
            println!(
                "    cluster {:>3}: size {:>3}, kept {:>3}, p = {:.2}, {:?} -> {} docs",
                c.id,
                c.size,
                c.retained,
                c.p.unwrap_or(f64::NAN),
                c.decision,
                c.assigned
            );
        }
        assert!(report.is_conserved());
    }
    Ok(())
}
