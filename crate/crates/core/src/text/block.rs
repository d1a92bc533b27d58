use std::collections::{BTreeMap, HashMap};
use std::fmt;

use nalgebra::DMatrix;

use super::reduce::{fit_reduced_basis, ReduceKind, ReducedBasis};
use super::tfidf::{fit_tfidf, tfidf_matrix, TfidfModel};
use super::tokenize::normalize_text;
use super::{NoteKind, TextError};
use crate::frame::{Column, FrameError, PatientFrame, HADM_ID};

pub const TEXT: &str = "text";
pub const CHARTTIME: &str = "charttime";

#[derive(Debug, Clone, PartialEq)]
pub struct NoteRecord {
    pub hadm_id: i64,
    pub kind: NoteKind,
    pub charttime: f64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoteCoverage {
    pub kind: NoteKind,
    pub notes: usize,
    pub admissions: usize,
}

impl NoteCoverage {
    pub fn percent(&self) -> f64 {
        if self.admissions == 0 {
            0.0
        } else {
            100.0 * self.notes as f64 / self.admissions as f64
        }
    }
}

impl fmt::Display for NoteCoverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} ({:.1}%)", self.kind, self.notes, self.percent())
    }
}

/// Earliest note per cohort admission (masked charttimes sort last, ties keep
/// the first row), returned in cohort row order.
pub fn select_notes(
    notes: &PatientFrame,
    cohort: &PatientFrame,
    kind: NoteKind,
) -> Result<(Vec<NoteRecord>, NoteCoverage), TextError> {
    let hadm = notes.column(HADM_ID)?;
    let text = notes.text(TEXT)?;
    let time = notes.column(CHARTTIME).ok();
    let mut best: HashMap<i64, (f64, usize)> = HashMap::new();
    for r in 0..notes.n_rows() {
        let Some(h) = hadm.get(r) else { continue };
        let t = time.and_then(|c| c.get(r)).unwrap_or(f64::INFINITY);
        best.entry(h as i64).and_modify(|b| if t < b.0 { *b = (t, r) }).or_insert((t, r));
    }
    let cohort_hadm = cohort.column(HADM_ID)?;
    let mut out = Vec::new();
    for r in 0..cohort.n_rows() {
        let Some(h) = cohort_hadm.get(r) else { continue };
        if let Some(&(t, row)) = best.get(&(h as i64)) {
            out.push(NoteRecord { hadm_id: h as i64, kind, charttime: t, text: text[row].clone() });
        }
    }
    let coverage = NoteCoverage { kind, notes: out.len(), admissions: cohort.n_rows() };
    Ok((out, coverage))
}

/// Reduced vectors for one modality keyed by hadm_id.
#[derive(Debug, Clone, PartialEq)]
pub struct TextBlock {
    pub prefix: String,
    pub dim: usize,
    pub vectors: HashMap<i64, Vec<f64>>,
}

/// Appends each block as `{prefix}{i}` columns (zeros for admissions without
/// a vector) plus one 0/1 indicator column per entry of `indicators`.
pub fn apply_text_block(
    cohort: &PatientFrame,
    blocks: &[TextBlock],
    indicators: &[(String, Vec<i64>)],
) -> Result<PatientFrame, FrameError> {
    let hadm: Vec<Option<i64>> = {
        let c = cohort.column(HADM_ID)?;
        (0..cohort.n_rows()).map(|r| c.get(r).map(|v| v as i64)).collect()
    };
    let mut out = cohort.clone();
    for block in blocks {
        for i in 0..block.dim {
            let vals = hadm
                .iter()
                .map(|h| h.and_then(|h| block.vectors.get(&h)).map_or(0.0, |v| v[i]))
                .collect();
            out = out.with_column(Column::numeric(format!("{}{i}", block.prefix), vals))?;
        }
    }
    for (name, present) in indicators {
        let vals = hadm.iter().map(|h| if h.is_some_and(|h| present.contains(&h)) { 1.0 } else { 0.0 }).collect();
        out = out.with_column(Column::numeric(name.clone(), vals))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextConfig {
    pub max_terms: usize,
    pub svd_target: f64,
    pub pca_target: f64,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self { max_terms: 500, svd_target: 0.80, pca_target: 0.90 }
    }
}

/// Note tables and optional embedding tables (hadm_id plus one numeric
/// column per dimension).
pub struct TextSources<'a> {
    pub discharge: &'a PatientFrame,
    pub radiology: &'a PatientFrame,
    pub discharge_emb: Option<&'a PatientFrame>,
    pub radiology_emb: Option<&'a PatientFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextReport {
    pub coverage: Vec<NoteCoverage>,
    pub tfidf: Vec<TfidfModel>,
    /// `(block prefix, basis)`.
    pub bases: Vec<(String, ReducedBasis)>,
    /// Admissions missing at least one note kind.
    pub missing_any: usize,
}

impl TextReport {
    pub fn text_columns(&self) -> usize {
        self.bases.iter().map(|(_, b)| b.retained).sum()
    }
}

fn embedding_rows(emb: &PatientFrame, notes: &[NoteRecord]) -> Result<(Vec<i64>, DMatrix<f64>), TextError> {
    let hadm = emb.column(HADM_ID)?;
    let dims: Vec<&Column> = emb.columns().iter().filter(|c| c.name != HADM_ID && c.is_numeric()).collect();
    let mut first: HashMap<i64, usize> = HashMap::new();
    for r in 0..emb.n_rows() {
        if let Some(h) = hadm.get(r) {
            first.entry(h as i64).or_insert(r);
        }
    }
    let picked: Vec<(i64, usize)> = notes.iter().filter_map(|n| first.get(&n.hadm_id).map(|&r| (n.hadm_id, r))).collect();
    let m = DMatrix::from_fn(picked.len(), dims.len(), |i, j| dims[j].get(picked[i].1).unwrap_or(0.0));
    Ok((picked.iter().map(|p| p.0).collect(), m))
}

fn block_from(prefix: &str, keys: &[i64], basis: &ReducedBasis, x: &DMatrix<f64>) -> TextBlock {
    let z = basis.transform(x);
    let vectors = keys.iter().enumerate().map(|(i, &h)| (h, z.row(i).iter().copied().collect())).collect();
    TextBlock { prefix: prefix.to_string(), dim: basis.retained, vectors }
}

/// Fits TF-IDF + truncated SVD per note kind and PCA per embedding table on
/// the cohort's selected notes, then lays the reduced vectors out on cohort
/// rows. Admissions without a note of a kind get zeros for every block of
/// that kind and a 0 indicator.
pub fn build_text_features(
    cohort: &PatientFrame,
    src: &TextSources<'_>,
    cfg: &TextConfig,
) -> Result<(PatientFrame, TextReport), TextError> {
    let mut blocks = Vec::new();
    let mut indicators = Vec::new();
    let mut report = TextReport { coverage: vec![], tfidf: vec![], bases: vec![], missing_any: 0 };
    let mut present: BTreeMap<i64, usize> = BTreeMap::new();

    for (kind, notes, emb) in [
        (NoteKind::Discharge, src.discharge, src.discharge_emb),
        (NoteKind::Radiology, src.radiology, src.radiology_emb),
    ] {
        let (records, coverage) = select_notes(notes, cohort, kind)?;
        log::info!("{coverage}");
        report.coverage.push(coverage);
        for r in &records {
            *present.entry(r.hadm_id).or_default() += 1;
        }

        let docs: Vec<Vec<String>> = records.iter().map(|r| normalize_text(&r.text)).collect();
        let model = fit_tfidf(&docs, kind, cfg.max_terms)?;
        let x = tfidf_matrix(&model, &docs);
        let basis = fit_reduced_basis(&x, ReduceKind::Svd, cfg.svd_target)?;
        let keys: Vec<i64> = records.iter().map(|r| r.hadm_id).collect();
        blocks.push(block_from(kind.tfidf_prefix(), &keys, &basis, &x));
        report.bases.push((kind.tfidf_prefix().to_string(), basis));
        report.tfidf.push(model);

        if let Some(emb) = emb {
            let (keys, x) = embedding_rows(emb, &records)?;
            let basis = fit_reduced_basis(&x, ReduceKind::Pca, cfg.pca_target)?;
            blocks.push(block_from(kind.embedding_prefix(), &keys, &basis, &x));
            report.bases.push((kind.embedding_prefix().to_string(), basis));
        }
        indicators.push((kind.indicator().to_string(), keys));
    }
    report.missing_any = cohort.n_rows() - present.values().filter(|&&c| c == 2).count();

    let keys = cohort.select_columns(&[HADM_ID])?;
    let frame = apply_text_block(&keys, &blocks, &indicators)?;
    Ok((frame, report))
}
