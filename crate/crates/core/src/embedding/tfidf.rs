use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use super::{Backend, EmbeddingMatrix, Vocabulary};
use crate::corpus::{Corpus, Document};
use crate::error::Result;
use crate::seed;

/// Sparse random projection with entries `sqrt(3/D) * {+1, 0, -1}` drawn with
/// probabilities `{1/6, 2/3, 1/6}`.
///
/// Each input coordinate gets its own ChaCha stream, so a row depends only on
/// `(seed, coordinate)`.
#[derive(Clone, Debug)]
pub struct RandomProjection {
    dim: usize,
    rows: Vec<Vec<(u32, f64)>>,
}

impl RandomProjection {
    pub fn new(input_dim: usize, output_dim: usize, seed: u64) -> Self {
        let scale = (3.0 / output_dim as f64).sqrt();
        let rows = (0..input_dim)
            .map(|t| {
                let mut rng = seed::Rng::seed_from_u64(seed);
                rng.set_stream(t as u64);
                (0..output_dim as u32)
                    .filter_map(|j| match rng.random_range(0..6u8) {
                        0 => Some((j, scale)),
                        1 => Some((j, -scale)),
                        _ => None,
                    })
                    .collect()
            })
            .collect();
        RandomProjection {
            dim: output_dim,
            rows,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.dim
    }

    /// Projects a sparse vector given as `(coordinate, value)` pairs.
    pub fn project_sparse(&self, entries: &[(usize, f64)]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(t, w) in entries {
            for &(j, r) in &self.rows[t] {
                out[j as usize] += w * r;
            }
        }
        out
    }

    pub fn project(&self, dense: &[f64]) -> Vec<f64> {
        let entries: Vec<(usize, f64)> = dense
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(t, &w)| (t, w))
            .collect();
        self.project_sparse(&entries)
    }
}

/// Raw tf·idf weights of one document as sorted `(token index, weight)`
/// pairs: `tf(t, d) * ln(N / df(t))` with `N` the vocabulary's document count.
pub(crate) fn tfidf_weights(doc: &Document, vocab: &Vocabulary) -> Vec<(usize, f64)> {
    let mut tf: Vec<(usize, u32)> = Vec::new();
    for tok in doc.tokens() {
        if let Some(i) = vocab.index_of(tok) {
            tf.push((i, 1));
        }
    }
    tf.sort_unstable_by_key(|e| e.0);
    tf.dedup_by(|next, kept| {
        if next.0 == kept.0 {
            kept.1 += next.1;
            true
        } else {
            false
        }
    });
    let n = vocab.total_docs() as f64;
    tf.into_iter()
        .map(|(i, count)| (i, count as f64 * (n / vocab.doc_freq(i) as f64).ln()))
        .collect()
}

/// TF-IDF embedding of every non-replica document, optionally projected to
/// `projection_dim` dimensions, with nonzero rows L2-normalized.
///
/// Documents without in-vocabulary tokens (or whose tokens all occur in every
/// document) come out as zero rows and are flagged.
pub fn tfidf_embed(
    corpus: &Corpus,
    vocab: &Vocabulary,
    projection_dim: Option<usize>,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    let docs: Vec<&Document> = corpus
        .documents()
        .iter()
        .filter(|d| !d.is_replica())
        .collect();
    let projection = projection_dim.map(|d| RandomProjection::new(vocab.len(), d, seed));
    let dim = projection
        .as_ref()
        .map_or(vocab.len(), RandomProjection::output_dim);

    let rows: Vec<Vec<f64>> = docs
        .par_iter()
        .map(|doc| {
            let weights = tfidf_weights(doc, vocab);
            match &projection {
                Some(p) => p.project_sparse(&weights),
                None => {
                    let mut dense = vec![0.0; dim];
                    for (i, w) in weights {
                        dense[i] = w;
                    }
                    dense
                }
            }
        })
        .collect();

    let ids = docs.iter().map(|d| d.id.clone()).collect();
    let mut matrix = EmbeddingMatrix::from_rows(Backend::Tfidf, dim, ids, rows.concat(), false)?;
    matrix.normalize();
    Ok(matrix)
}
