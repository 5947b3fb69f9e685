//! Generates each preset and prints what it planted.
//!
//! ```text
//! cargo run --example synthetic_corpus -- [OUT_DIR]
//! ```

use std::collections::BTreeMap;

use cluster_augment::synthgen::{generate, write_generated, SyntheticSpec, PRESETS};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1);
    for name in PRESETS {
        let spec = SyntheticSpec::preset(name).unwrap();
        let (corpus, truth) = generate(&spec)?;

        let mut topics: BTreeMap<usize, usize> = BTreeMap::new();
        for t in truth.values() {
            *topics.entry(t.topic).or_default() += 1;
        }
        println!(
            "{name}: {} documents, topic sizes {:?}, separability {}",
            corpus.len(),
            topics.values().collect::<Vec<_>>(),
            spec.separability
        );
        for goal in corpus.goals() {
            let c = corpus.label_counts(goal);
            let noisy = corpus
                .documents()
                .iter()
                .filter(|d| {
                    d.label(goal)
                        .original()
                        .is_some_and(|v| u8::from(v) != truth[&d.id].labels[goal])
                })
                .count();
            println!(
                "  {goal}: positive topics {:?}, labeled {} ({} positive, {} negative), {noisy} flipped labels",
                spec.positive_topics[goal],
                c.total_labeled(),
                c.original_1,
                c.original_0
            );
        }
        let sample = &corpus.documents()[0];
        let preview: String = sample
            .clean_text
            .split(' ')
            .take(12)
            .collect::<Vec<_>>()
            .join(" ");
        println!(
            "  {} (topic {}): {preview} ...",
            sample.id, truth[&sample.id].topic
        );

        if let Some(dir) = &out {
            let dir = std::path::Path::new(dir).join(name);
            write_generated(&dir, &corpus, &truth)?;
            println!("  written to {}", dir.display());
        }
    }
    Ok(())
}
