//! Text-derived features: note selection, tokenization, TF-IDF with truncated
//! SVD, PCA of precomputed note embeddings, zero fill and note indicators.

mod block;
mod reduce;
mod tfidf;
mod tokenize;

pub use block::{
    apply_text_block, build_text_features, select_notes, NoteCoverage, NoteRecord, TextBlock, TextConfig, TextReport,
    TextSources,
};
pub use reduce::{fit_reduced_basis, retained_count, ReduceKind, ReducedBasis};
pub use tfidf::{fit_tfidf, tfidf_matrix, transform_tfidf, TfidfModel};
pub use tokenize::{normalize_text, STOPWORDS};

use thiserror::Error;

use crate::frame::FrameError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoteKind {
    Discharge,
    Radiology,
}

impl NoteKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NoteKind::Discharge => "discharge",
            NoteKind::Radiology => "radiology",
        }
    }

    /// Column prefix of the TF-IDF/SVD block.
    pub fn tfidf_prefix(self) -> &'static str {
        match self {
            NoteKind::Discharge => "disch_tfidf_svd_",
            NoteKind::Radiology => "radio_tfidf_svd_",
        }
    }

    /// Column prefix of the embedding/PCA block.
    pub fn embedding_prefix(self) -> &'static str {
        match self {
            NoteKind::Discharge => "discharge_bert_pca_",
            NoteKind::Radiology => "radiology_bert_pca_",
        }
    }

    pub fn indicator(self) -> &'static str {
        match self {
            NoteKind::Discharge => "has_discharge_note",
            NoteKind::Radiology => "has_radiology_note",
        }
    }
}

impl std::fmt::Display for NoteKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum TextError {
    #[error("no tokens in any {0} note")]
    EmptyCorpus(NoteKind),
    #[error("need at least 2 rows to fit a basis, got {0}")]
    TooFewRows(usize),
    #[error("variance target {0} outside (0, 1]")]
    InvalidTarget(f64),
    #[error("matrix has zero variance")]
    ZeroVariance,
    #[error("eigenpair {component} residual {residual:e} above tolerance")]
    ConvergenceFailure { component: usize, residual: f64 },
    #[error(transparent)]
    Frame(#[from] FrameError),
}
