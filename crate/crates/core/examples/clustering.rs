//! Runs k-means over a range of K on a preset and reports inertia and how
//! pure the clusters are with respect to the planted topics.

use std::collections::BTreeMap;

use cluster_augment::clustering::{kmeans_fit, KMeansConfig};
use cluster_augment::pipeline::{embed, EmbeddingConfig};
use cluster_augment::synthgen::{generate, SyntheticSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (corpus, truth) = generate(&SyntheticSpec::preset("sep5-noisy").unwrap())?;
    let (points, _) = embed(&corpus, &EmbeddingConfig::default(), 0)?;

    println!(
        "{:>4} {:>12} {:>6} {:>8}",
        "K", "inertia", "iters", "purity"
    );
    for k in [2, 5, 10, 25, 50, 100] {
        let model = kmeans_fit(&points, k, 0, &KMeansConfig::default())?;
        // Purity: share of documents whose cluster's majority topic is their own.
        let mut majority = 0;
        for c in 0..k {
            let mut topics: BTreeMap<usize, usize> = BTreeMap::new();
            for i in model.members(c) {
                *topics.entry(truth[&model.ids[i]].topic).or_default() += 1;
            }
            majority += topics.values().max().copied().unwrap_or(0);
        }
        println!(
            "{k:>4} {:>12.3} {:>6} {:>8.3}",
            model.inertia,
            model.iterations_run,
            majority as f64 / points.len() as f64
        );
    }
    Ok(())
}
