use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Sparse vector as `(row, value)` pairs sorted by row.
pub type SparseVec = Vec<(usize, f64)>;

/// Dense word → row index over the training vocabulary (alphabetical order).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabularyIndex {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl VocabularyIndex {
    pub fn new(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(VocabularyIndex { words, index })
    }

    pub fn row(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdfModel {
    pub vocab: VocabularyIndex,
    pub idf: Array1<f64>,
    pub doc_count: usize,
}

/// Fit document frequencies over tokenized documents. `idf(v) = ln(|D| / df(v))`
/// with `df(v)` the number of documents containing `v`.
pub fn fit_tfidf<S: AsRef<str>>(docs: &[Vec<S>]) -> Result<TfIdfModel> {
    if docs.iter().all(|d| d.is_empty()) {
        return Err(Error::InvalidArgument("tf-idf needs at least one non-empty document".into()));
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let unique: BTreeSet<&str> = doc.iter().map(AsRef::as_ref).collect();
        for w in unique {
            *df.entry(w).or_default() += 1;
        }
    }
    let doc_count = docs.len();
    let words: Vec<String> = df.keys().map(|w| w.to_string()).collect();
    let idf = df
        .values()
        .map(|&n| (doc_count as f64 / n as f64).ln())
        .collect();
    Ok(TfIdfModel {
        vocab: VocabularyIndex::new(words)?,
        idf,
        doc_count,
    })
}

impl TfIdfModel {
    pub fn dim(&self) -> usize {
        self.vocab.len()
    }

    /// Term frequencies over in-vocabulary words only.
    pub fn term_frequencies<S: AsRef<str>>(&self, doc: &[S]) -> SparseVec {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for w in doc {
            if let Some(row) = self.vocab.row(w.as_ref()) {
                *counts.entry(row).or_default() += 1;
            }
        }
        let total: usize = counts.values().sum();
        counts
            .into_iter()
            .map(|(row, c)| (row, c as f64 / total as f64))
            .collect()
    }

    /// tf-idf column for one document; OOV words are dropped before normalizing.
    pub fn transform_sparse<S: AsRef<str>>(&self, doc: &[S]) -> SparseVec {
        self.term_frequencies(doc)
            .into_iter()
            .map(|(row, tf)| (row, tf * self.idf[row]))
            .collect()
    }

    pub fn transform<S: AsRef<str>>(&self, doc: &[S]) -> Array1<f64> {
        let mut out = Array1::zeros(self.dim());
        for (row, v) in self.transform_sparse(doc) {
            out[row] = v;
        }
        out
    }

    /// Dense |V|×|D| tf-idf matrix; intended for small corpora.
    pub fn matrix<S: AsRef<str>>(&self, docs: &[Vec<S>]) -> Array2<f64> {
        let mut t = Array2::zeros((self.dim(), docs.len()));
        for (j, doc) in docs.iter().enumerate() {
            for (row, v) in self.transform_sparse(doc) {
                t[[row, j]] = v;
            }
        }
        t
    }
}
