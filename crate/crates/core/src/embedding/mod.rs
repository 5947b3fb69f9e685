//! Document embeddings.
//!
//! Two backends produce the same [`EmbeddingMatrix`]: sparse TF-IDF with an
//! optional random projection, and PV-DBOW paragraph vectors trained with
//! negative sampling. Downstream stages only see the matrix.

mod doc2vec;
mod tfidf;
mod vocab;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::artifact::{self, MatrixMeta, FORMAT_VERSION};
use crate::corpus::Document;
use crate::error::{Error, Result};

pub use doc2vec::{
    sgns_gradient, sgns_loss, train_doc2vec, Doc2VecModel, Doc2VecParams, NoiseDistribution,
    SgnsGradient,
};
pub use tfidf::{tfidf_embed, RandomProjection};
pub use vocab::{build_vocab, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Tfidf,
    Doc2vec,
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Tfidf => "tfidf",
            Backend::Doc2vec => "doc2vec",
        })
    }
}

/// Dense per-document vectors, one row per id.
///
/// Rows flagged as zero carry no information (no in-vocabulary tokens) and
/// are left out of clustering.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    backend: Backend,
    dim: usize,
    normalized: bool,
    ids: Vec<String>,
    data: Vec<f64>,
    zero: Vec<bool>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct EmbeddingMeta {
    format_version: u32,
    backend: Backend,
    normalized: bool,
    vectors: MatrixMeta,
    ids_file: String,
    flagged: Vec<String>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from row-major data. Zero rows are flagged.
    pub fn from_rows(
        backend: Backend,
        dim: usize,
        ids: Vec<String>,
        data: Vec<f64>,
        normalized: bool,
    ) -> Result<Self> {
        if data.len() != ids.len() * dim {
            return Err(Error::DimensionMismatch {
                expected: ids.len() * dim,
                found: data.len(),
            });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        let zero = data
            .chunks(dim.max(1))
            .take(ids.len())
            .map(|row| row.iter().all(|&v| v == 0.0))
            .collect();
        Ok(EmbeddingMatrix {
            backend,
            dim,
            normalized,
            ids,
            data,
            zero,
            index,
        })
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    /// Vector for a document; replicas share their source's vector.
    pub fn vector_for(&self, doc: &Document) -> Result<&[f64]> {
        self.vector(doc.embedding_id())
            .ok_or_else(|| Error::MissingEmbedding(doc.id.clone()))
    }

    pub fn is_flagged(&self, id: &str) -> bool {
        self.index.get(id).is_some_and(|&i| self.zero[i])
    }

    pub fn flagged(&self) -> impl Iterator<Item = &str> {
        self.ids
            .iter()
            .zip(&self.zero)
            .filter(|(_, &z)| z)
            .map(|(id, _)| id.as_str())
    }

    /// Scales every nonzero row to unit L2 norm.
    pub fn normalize(&mut self) {
        for row in self.data.chunks_mut(self.dim.max(1)) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        self.normalized = true;
    }

    /// Rounds every entry through `f32`, the precision of the on-disk format.
    pub fn round_to_f32(&mut self) {
        self.data
            .iter_mut()
            .for_each(|v| *v = artifact::round_f32(*v));
    }

    /// A new matrix with one row per document, keyed by the document's own
    /// id; replicas copy their source's row.
    pub fn gather(&self, docs: &[&Document]) -> Result<EmbeddingMatrix> {
        let mut data = Vec::with_capacity(docs.len() * self.dim);
        let mut ids = Vec::with_capacity(docs.len());
        for doc in docs {
            data.extend_from_slice(self.vector_for(doc)?);
            ids.push(doc.id.clone());
        }
        EmbeddingMatrix::from_rows(self.backend, self.dim, ids, data, self.normalized)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        artifact::create_dir(dir)?;
        let vectors =
            artifact::write_f32_matrix(dir, "vectors.f32", self.len(), self.dim, &self.data)?;
        let ids_path = dir.join("ids.txt");
        let mut ids = self.ids.join("\n");
        ids.push('\n');
        std::fs::write(&ids_path, ids).map_err(|e| Error::io(&ids_path, e))?;
        let meta = EmbeddingMeta {
            format_version: FORMAT_VERSION,
            backend: self.backend,
            normalized: self.normalized,
            vectors,
            ids_file: "ids.txt".into(),
            flagged: self.flagged().map(str::to_string).collect(),
        };
        artifact::write_json(&dir.join("meta.json"), &meta)
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let meta: EmbeddingMeta = artifact::read_json(&dir.join("meta.json"), "embed")?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::CorruptArtifact {
                path: dir.join("meta.json"),
                message: format!("unsupported format version {}", meta.format_version),
            });
        }
        let ids: Vec<String> = artifact::read_text(&dir.join(&meta.ids_file), "embed")?
            .lines()
            .map(str::to_string)
            .collect();
        if ids.len() != meta.vectors.rows {
            return Err(Error::CorruptArtifact {
                path: dir.join(&meta.ids_file),
                message: format!("{} ids for {} rows", ids.len(), meta.vectors.rows),
            });
        }
        let data = artifact::read_f32_matrix(dir, &meta.vectors, "embed")?;
        EmbeddingMatrix::from_rows(meta.backend, meta.vectors.cols, ids, data, meta.normalized)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn zero_rows_are_flagged_and_survive_normalization() {
        let mut m = EmbeddingMatrix::from_rows(
            Backend::Tfidf,
            2,
            vec!["a".into(), "b".into()],
            vec![3.0, 4.0, 0.0, 0.0],
            false,
        )
        .unwrap();
        m.normalize();
        assert_eq!(m.vector("a").unwrap(), &[0.6, 0.8]);
        assert_eq!(m.vector("b").unwrap(), &[0.0, 0.0]);
        assert_eq!(m.flagged().collect::<Vec<_>>(), ["b"]);
    }

    #[test]
    fn replicas_resolve_to_their_source() {
        let m = EmbeddingMatrix::from_rows(Backend::Tfidf, 1, vec!["a".into()], vec![1.0], true)
            .unwrap();
        let mut doc = Document::new("a~r1", "x", BTreeMap::new());
        assert!(m.vector_for(&doc).is_err());
        doc.replica_of = Some("a".into());
        assert_eq!(m.vector_for(&doc).unwrap(), &[1.0]);
        let g = m.gather(&[&doc]).unwrap();
        assert_eq!(g.ids(), ["a~r1"]);
    }

    #[test]
    fn artifact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = EmbeddingMatrix::from_rows(
            Backend::Doc2vec,
            3,
            vec!["x".into(), "y".into()],
            vec![0.1, 0.2, 0.3, 0.0, 0.0, 0.0],
            true,
        )
        .unwrap();
        m.write_dir(dir.path()).unwrap();
        let back = EmbeddingMatrix::read_dir(dir.path()).unwrap();
        m.round_to_f32();
        assert_eq!(back, m);
        let meta = std::fs::read_to_string(dir.path().join("meta.json")).unwrap();
        assert!(meta.contains("\"backend\": \"doc2vec\""));
    }
}
