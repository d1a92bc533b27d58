//! Numeric design matrices with per-column provenance, and z-score
//! standardization fitted on a training subset.

use nalgebra::DMatrix;

use crate::frame::{FrameError, PatientFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Structured,
    Tfidf,
    Embedding,
    Indicator,
}

impl Provenance {
    /// Classifies a column from its name as emitted by the text block.
    pub fn infer(name: &str) -> Self {
        if name.contains("_tfidf_svd_") {
            Provenance::Tfidf
        } else if name.contains("_bert_pca_") {
            Provenance::Embedding
        } else if name.starts_with("has_") && name.ends_with("_note") {
            Provenance::Indicator
        } else {
            Provenance::Structured
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Provenance::Structured => "structured",
            Provenance::Tfidf => "tfidf",
            Provenance::Embedding => "embedding",
            Provenance::Indicator => "indicator",
        }
    }
}

/// Row-major view is not needed anywhere, so the matrix keeps nalgebra's
/// column-major layout; masked frame cells become `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: DMatrix<f64>,
    pub names: Vec<String>,
    pub provenance: Vec<Provenance>,
}

impl FeatureMatrix {
    pub fn new(data: DMatrix<f64>, names: Vec<String>) -> Self {
        assert_eq!(data.ncols(), names.len(), "one name per column");
        let provenance = names.iter().map(|n| Provenance::infer(n)).collect();
        Self { data, names, provenance }
    }

    pub fn from_frame(frame: &PatientFrame, names: &[String]) -> Result<Self, FrameError> {
        let mut data = DMatrix::zeros(frame.n_rows(), names.len());
        for (j, name) in names.iter().enumerate() {
            let col = frame.column(name)?;
            let vals = col.as_numeric().ok_or_else(|| FrameError::NonNumericColumn(name.clone()))?;
            for (i, &v) in vals.iter().enumerate() {
                data[(i, j)] = if col.missing[i] { f64::NAN } else { v };
            }
        }
        Ok(Self::new(data, names.to_vec()))
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn select_columns(&self, names: &[String]) -> Option<Self> {
        let idx: Vec<usize> = names.iter().map(|n| self.index_of(n)).collect::<Option<_>>()?;
        Some(self.select_indices(&idx))
    }

    pub fn select_indices(&self, idx: &[usize]) -> Self {
        Self {
            data: self.data.select_columns(idx),
            names: idx.iter().map(|&i| self.names[i].clone()).collect(),
            provenance: idx.iter().map(|&i| self.provenance[i]).collect(),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self { data: self.data.select_rows(rows), names: self.names.clone(), provenance: self.provenance.clone() }
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.column(j).iter().copied().collect()
    }
}

/// Column means and standard deviations (population) from training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fits on the given rows, skipping `NaN` cells. Constant columns get scale 1.
    pub fn fit(x: &FeatureMatrix, rows: &[usize]) -> Self {
        let p = x.ncols();
        let mut mean = vec![0.0; p];
        let mut scale = vec![1.0; p];
        for j in 0..p {
            let vals: Vec<f64> = rows.iter().map(|&i| x.data[(i, j)]).filter(|v| v.is_finite()).collect();
            if vals.is_empty() {
                continue;
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64;
            mean[j] = m;
            if var.sqrt() > 1e-12 {
                scale[j] = var.sqrt();
            }
        }
        Self { mean, scale }
    }

    pub fn apply(&self, x: &FeatureMatrix) -> FeatureMatrix {
        let mut out = x.clone();
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                out.data[(i, j)] = (x.data[(i, j)] - self.mean[j]) / self.scale[j];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardizer_uses_training_rows_only() {
        let x = FeatureMatrix::new(DMatrix::from_column_slice(4, 1, &[1.0, 3.0, 100.0, 100.0]), vec!["a".into()]);
        let s = Standardizer::fit(&x, &[0, 1]);
        assert_eq!(s.mean, vec![2.0]);
        assert_eq!(s.scale, vec![1.0]);
        let z = s.apply(&x);
        assert_eq!(z.data[(2, 0)], 98.0);
    }

    #[test]
    fn provenance_from_names() {
        assert_eq!(Provenance::infer("disch_tfidf_svd_3"), Provenance::Tfidf);
        assert_eq!(Provenance::infer("radiology_bert_pca_1"), Provenance::Embedding);
        assert_eq!(Provenance::infer("has_discharge_note"), Provenance::Indicator);
        assert_eq!(Provenance::infer("Lactate"), Provenance::Structured);
    }
}
