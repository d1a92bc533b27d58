use std::collections::HashMap;

use nalgebra::DMatrix;

use super::{NoteKind, TextError};

#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    pub kind: NoteKind,
    pub vocabulary: Vec<String>,
    pub idf: Vec<f64>,
    pub df: Vec<usize>,
    pub n_docs: usize,
    index: HashMap<String, usize>,
}

impl TfidfModel {
    pub fn term_index(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }
}

/// Vocabulary of the `max_terms` terms with the highest document frequency,
/// ties broken lexicographically, and `idf = ln((1 + N) / (1 + df)) + 1`.
pub fn fit_tfidf(docs: &[Vec<String>], kind: NoteKind, max_terms: usize) -> Result<TfidfModel, TextError> {
    if docs.iter().all(Vec::is_empty) {
        return Err(TextError::EmptyCorpus(kind));
    }
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in docs {
        let mut seen: Vec<&str> = doc.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = df.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_terms);

    let n = docs.len();
    let vocabulary: Vec<String> = ranked.iter().map(|(t, _)| t.to_string()).collect();
    let df: Vec<usize> = ranked.iter().map(|&(_, d)| d).collect();
    let idf = df.iter().map(|&d| ((1.0 + n as f64) / (1.0 + d as f64)).ln() + 1.0).collect();
    let index = vocabulary.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    Ok(TfidfModel { kind, vocabulary, idf, df, n_docs: n, index })
}

/// Sparse L2-normalized `tf * idf` vector as `(term index, weight)` pairs in
/// index order. Out-of-vocabulary tokens are ignored.
pub fn transform_tfidf(model: &TfidfModel, doc: &[String]) -> Vec<(usize, f64)> {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    for t in doc {
        if let Some(i) = model.term_index(t) {
            *counts.entry(i).or_default() += 1.0;
        }
    }
    let mut weights: Vec<(usize, f64)> = counts.into_iter().map(|(i, tf)| (i, tf * model.idf[i])).collect();
    weights.sort_by_key(|&(i, _)| i);
    let norm = weights.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, w) in &mut weights {
            *w /= norm;
        }
    }
    weights
}

/// Dense document-term matrix, one row per document.
pub fn tfidf_matrix(model: &TfidfModel, docs: &[Vec<String>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(docs.len(), model.vocabulary.len());
    for (r, doc) in docs.iter().enumerate() {
        for (j, w) in transform_tfidf(model, doc) {
            m[(r, j)] = w;
        }
    }
    m
}
