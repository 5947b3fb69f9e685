//! Compares how well TF-IDF and PV-DBOW embeddings separate planted topics.
//!
//! For each backend, prints the mean cosine similarity between documents of
//! the same topic and of different topics on a sample of pairs, both raw and
//! after subtracting the corpus mean vector. PV-DBOW vectors share a large
//! common component, so their raw cosines sit close to 1.

use std::time::Instant;

use cluster_augment::embedding::{cosine, Backend, EmbeddingMatrix};
use cluster_augment::pipeline::{embed, EmbeddingConfig};
use cluster_augment::seed;
use cluster_augment::synthgen::{generate, GroundTruth, SyntheticSpec};
use rand::Rng;

fn centered(matrix: &EmbeddingMatrix) -> Vec<Vec<f64>> {
    let n = matrix.len() as f64;
    let mut mean = vec![0.0; matrix.dim()];
    for i in 0..matrix.len() {
        mean.iter_mut()
            .zip(matrix.row(i))
            .for_each(|(m, v)| *m += v / n);
    }
    (0..matrix.len())
        .map(|i| {
            matrix
                .row(i)
                .iter()
                .zip(&mean)
                .map(|(v, m)| v - m)
                .collect()
        })
        .collect()
}

fn separation(matrix: &EmbeddingMatrix, rows: &[Vec<f64>], truth: &GroundTruth) -> (f64, f64) {
    let mut rng = seed::rng(1);
    let (mut same, mut diff) = (Vec::new(), Vec::new());
    while same.len() < 2000 || diff.len() < 2000 {
        let a = rng.random_range(0..matrix.len());
        let b = rng.random_range(0..matrix.len());
        if a == b {
            continue;
        }
        let c = cosine(&rows[a], &rows[b]);
        if truth[&matrix.ids()[a]].topic == truth[&matrix.ids()[b]].topic {
            same.push(c);
        } else {
            diff.push(c);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (mean(&same), mean(&diff))
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let preset = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "sep5-noisy".into());
    let (corpus, truth) = generate(&SyntheticSpec::preset(&preset).ok_or("unknown preset")?)?;

    let tfidf_full = EmbeddingConfig {
        projection_dim: 0,
        ..EmbeddingConfig::default()
    };
    let doc2vec = EmbeddingConfig {
        backend: Backend::Doc2vec,
        ..EmbeddingConfig::default()
    };

    for (name, config) in [
        ("tfidf (full vocabulary)", tfidf_full),
        ("tfidf (projected to 128)", EmbeddingConfig::default()),
        ("doc2vec (PV-DBOW)", doc2vec),
    ] {
        let start = Instant::now();
        let (matrix, _) = embed(&corpus, &config, 7)?;
        let took = start.elapsed();
        let raw: Vec<Vec<f64>> = (0..matrix.len()).map(|i| matrix.row(i).to_vec()).collect();
        let (same, diff) = separation(&matrix, &raw, &truth);
        let (c_same, c_diff) = separation(&matrix, &centered(&matrix), &truth);
        println!(
            "{name:<26} dim {:>4}  raw {same:.3} vs {diff:.3}  centered {c_same:.3} vs {c_diff:.3}  ({took:.1?})",
            matrix.dim(),
        );
    }
    Ok(())
}
