use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Token index with document frequencies and raw occurrence counts.
///
/// Indices are contiguous and ordered by descending document frequency,
/// ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    doc_freq: Vec<usize>,
    term_count: Vec<u64>,
    total_docs: usize,
    min_count: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub(crate) fn from_parts(
        tokens: Vec<String>,
        doc_freq: Vec<usize>,
        term_count: Vec<u64>,
        total_docs: usize,
        min_count: usize,
    ) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            tokens,
            doc_freq,
            term_count,
            total_docs,
            min_count,
            index,
        }
    }

    /// Rebuilds the lookup table after deserialization.
    pub(crate) fn reindex(mut self) -> Self {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        self
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn doc_freq(&self, index: usize) -> usize {
        self.doc_freq[index]
    }

    pub fn term_count(&self, index: usize) -> u64 {
        self.term_count[index]
    }

    pub fn total_docs(&self) -> usize {
        self.total_docs
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn total_terms(&self) -> u64 {
        self.term_count.iter().sum()
    }
}

/// Counts tokens of the cleaned text of every non-replica document and keeps
/// those with document frequency of at least `min_count`.
pub fn build_vocab(corpus: &Corpus, min_count: usize) -> Result<Vocabulary> {
    let docs: Vec<_> = corpus
        .documents()
        .iter()
        .filter(|d| !d.is_replica())
        .collect();
    if docs.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot build a vocabulary from an empty corpus".into(),
        ));
    }
    let per_doc: Vec<BTreeMap<&str, u64>> = docs
        .par_iter()
        .map(|doc| {
            let mut counts = BTreeMap::new();
            for tok in doc.tokens() {
                *counts.entry(tok).or_insert(0u64) += 1;
            }
            counts
        })
        .collect();

    let mut stats: BTreeMap<&str, (usize, u64)> = BTreeMap::new();
    for counts in &per_doc {
        for (&tok, &n) in counts {
            let entry = stats.entry(tok).or_default();
            entry.0 += 1;
            entry.1 += n;
        }
    }
    let mut kept: Vec<(&str, usize, u64)> = stats
        .into_iter()
        .filter(|&(_, (df, _))| df >= min_count)
        .map(|(t, (df, n))| (t, df, n))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyVocabulary { min_count });
    }
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let tokens = kept.iter().map(|k| k.0.to_string()).collect();
    let doc_freq = kept.iter().map(|k| k.1).collect();
    let term_count = kept.iter().map(|k| k.2).collect();
    Ok(Vocabulary::from_parts(
        tokens,
        doc_freq,
        term_count,
        docs.len(),
        min_count,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use rand::Rng;
    use std::collections::HashMap;

    fn corpus(texts: &[&str]) -> Corpus {
        let docs = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document::new(format!("d{i}"), *t, BTreeMap::new()))
            .collect();
        Corpus::new(docs, vec![]).unwrap()
    }

    #[test]
    fn counts_document_frequency() {
        let v = build_vocab(&corpus(&["a b", "a c"]), 1).unwrap();
        assert_eq!(v.tokens(), ["a", "b", "c"]);
        assert_eq!((0..3).map(|i| v.doc_freq(i)).collect::<Vec<_>>(), [2, 1, 1]);
        assert_eq!(v.total_docs(), 2);
    }

    #[test]
    fn min_count_threshold() {
        let v = build_vocab(&corpus(&["a b", "a c"]), 2).unwrap();
        assert_eq!(v.tokens(), ["a"]);
    }

    #[test]
    fn empty_after_filtering() {
        assert!(matches!(
            build_vocab(&corpus(&["a b", "c d"]), 2),
            Err(Error::EmptyVocabulary { min_count: 2 })
        ));
    }

    #[test]
    fn matches_independent_recount() {
        let mut rng = crate::seed::rng(11);
        let words: Vec<String> = (0..300)
            .map(|i| format!("w{}", char::from(b'a' + (i % 26) as u8)).repeat(1 + i / 26))
            .collect();
        let texts: Vec<String> = (0..1000)
            .map(|_| {
                let n = rng.random_range(1..30);
                (0..n)
                    .map(|_| {
                        words[(rng.random::<f64>().powi(3) * words.len() as f64) as usize].as_str()
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let c = corpus(&refs);
        let v = build_vocab(&c, 5).unwrap();

        // Oracle: plain hash-map document-frequency count over raw texts.
        let mut df: HashMap<&str, usize> = HashMap::new();
        for t in &texts {
            let mut seen: Vec<&str> = t.split(' ').collect();
            seen.sort();
            seen.dedup();
            for w in seen {
                *df.entry(w).or_default() += 1;
            }
        }
        let mut expected: Vec<(&str, usize)> = df.into_iter().filter(|&(_, n)| n >= 5).collect();
        expected.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let got: Vec<(&str, usize)> = (0..v.len()).map(|i| (v.token(i), v.doc_freq(i))).collect();
        assert_eq!(got, expected);
    }
}
