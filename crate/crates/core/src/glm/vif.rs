use nalgebra::{DMatrix, DVector};

use crate::linalg::solve_psd_pinv;
use crate::matrix::FeatureMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct VifConfig {
    /// Reported as problematic above this value.
    pub warn_threshold: f64,
    /// Variables are removed while any VIF exceeds this value.
    pub drop_threshold: f64,
    /// `(keep, drop)` pairs consulted before falling back to max-VIF removal.
    pub preferences: Vec<(String, String)>,
}

impl Default for VifConfig {
    fn default() -> Self {
        let pair = |k: &str, d: &str| (k.to_string(), d.to_string());
        Self {
            warn_threshold: 5.0,
            drop_threshold: 10.0,
            preferences: vec![pair("PT", "INR"), pair("Hemoglobin", "Hematocrit"), pair("MBP", "DBP")],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VifDrop {
    pub dropped: String,
    pub kept_instead: Option<String>,
    pub vif: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VifReport {
    pub initial: Vec<(String, f64)>,
    pub final_vifs: Vec<(String, f64)>,
    pub drop_sequence: Vec<VifDrop>,
    pub kept: Vec<String>,
    pub warn_threshold: f64,
}

impl VifReport {
    pub fn warnings(&self) -> Vec<&str> {
        self.final_vifs.iter().filter(|(_, v)| *v > self.warn_threshold).map(|(n, _)| n.as_str()).collect()
    }
}

/// Variance inflation factor of every column: 1/(1 − R²) of the column
/// regressed (with intercept) on all other columns. Constant columns and
/// exact linear dependence give `f64::INFINITY`.
pub fn vif(x: &FeatureMatrix) -> Vec<f64> {
    vif_of(&x.data)
}

fn vif_of(data: &DMatrix<f64>) -> Vec<f64> {
    let (n, p) = data.shape();
    let mut centered = data.clone();
    for j in 0..p {
        let m = centered.column(j).mean();
        centered.column_mut(j).add_scalar_mut(-m);
    }
    let gram = centered.transpose() * &centered;
    let scale = (0..p).map(|j| gram[(j, j)]).fold(0.0_f64, f64::max).max(f64::MIN_POSITIVE);
    (0..p)
        .map(|j| {
            let tss = gram[(j, j)];
            if tss <= 1e-12 * scale || n < 2 {
                return f64::INFINITY;
            }
            if p == 1 {
                return 1.0;
            }
            let others: Vec<usize> = (0..p).filter(|&k| k != j).collect();
            let g_oo = gram.select_rows(&others).select_columns(&others);
            let g_oj = DVector::from_iterator(others.len(), others.iter().map(|&k| gram[(k, j)]));
            let b = solve_psd_pinv(&g_oo, &g_oj, 1e-10);
            let explained = g_oj.dot(&b);
            let one_minus_r2 = ((tss - explained) / tss).max(0.0);
            if one_minus_r2 < 1e-10 {
                f64::INFINITY
            } else {
                1.0 / one_minus_r2
            }
        })
        .collect()
}

/// Iteratively removes variables while any VIF exceeds the drop threshold:
/// configured `(keep, drop)` pairs are honoured first, otherwise the
/// maximum-VIF variable goes (first by column order on ties).
pub fn resolve_collinearity(x: &FeatureMatrix, cfg: &VifConfig) -> VifReport {
    let mut kept: Vec<usize> = (0..x.ncols()).collect();
    let initial_vals = vif(x);
    let initial = x.names.iter().cloned().zip(initial_vals.iter().copied()).collect();
    let mut drops = Vec::new();
    let mut current = initial_vals;

    while kept.len() > 1 {
        let over: Vec<usize> = (0..kept.len()).filter(|&i| current[i] > cfg.drop_threshold).collect();
        if over.is_empty() {
            break;
        }
        let name_at = |i: usize| x.names[kept[i]].as_str();
        let preferred = cfg.preferences.iter().find_map(|(keep, drop)| {
            let d = over.iter().copied().find(|&i| name_at(i) == drop)?;
            (0..kept.len()).any(|i| name_at(i) == keep).then(|| (d, keep.clone()))
        });
        let (victim, entry) = match preferred {
            Some((i, keep)) => (
                i,
                VifDrop {
                    dropped: name_at(i).to_string(),
                    kept_instead: Some(keep.clone()),
                    vif: current[i],
                    reason: format!("collinear with {keep}; preference ledger keeps {keep}"),
                },
            ),
            None => {
                let constant = over.iter().copied().find(|&i| {
                    let col = x.data.column(kept[i]);
                    let m = col.mean();
                    col.iter().all(|v| (v - m).abs() < 1e-12)
                });
                let i = constant.unwrap_or_else(|| {
                    over.iter().copied().fold(over[0], |best, i| if current[i] > current[best] { i } else { best })
                });
                let reason = if constant.is_some() {
                    "constant column (VIF undefined)".to_string()
                } else {
                    format!("maximum VIF above {}", cfg.drop_threshold)
                };
                (i, VifDrop { dropped: name_at(i).to_string(), kept_instead: None, vif: current[i], reason })
            }
        };
        drops.push(entry);
        kept.remove(victim);
        current = vif_of(&x.data.select_columns(&kept));
    }

    let final_vifs = kept.iter().zip(&current).map(|(&j, &v)| (x.names[j].clone(), v)).collect();
    VifReport {
        initial,
        final_vifs,
        drop_sequence: drops,
        kept: kept.iter().map(|&j| x.names[j].clone()).collect(),
        warn_threshold: cfg.warn_threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn fm(data: DMatrix<f64>, names: &[&str]) -> FeatureMatrix {
        FeatureMatrix::new(data, names.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn orthogonal_columns_have_unit_vif() {
        // centered, mutually orthogonal columns
        let data = DMatrix::from_row_slice(4, 3, &[
            1.0, 1.0, 1.0,
            1.0, -1.0, -1.0,
            -1.0, 1.0, -1.0,
            -1.0, -1.0, 1.0,
        ]);
        for v in vif(&fm(data, &["a", "b", "c"])) {
            assert!((v - 1.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn identical_columns_are_infinite_and_one_dropped() {
        let mut rng = crate::seed::rng(1);
        let a: Vec<f64> = (0..50).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..50).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut data = DMatrix::zeros(50, 3);
        for i in 0..50 {
            data[(i, 0)] = a[i];
            data[(i, 1)] = a[i];
            data[(i, 2)] = b[i];
        }
        let x = fm(data, &["a", "a_copy", "b"]);
        let v = vif(&x);
        assert!(v[0].is_infinite() && v[1].is_infinite() && v[2].is_finite());
        let report = resolve_collinearity(&x, &VifConfig::default());
        assert_eq!(report.drop_sequence.len(), 1);
        assert_eq!(report.kept.len(), 2);
    }

    #[test]
    fn preference_ledger_drops_inr_keeps_pt() {
        let mut rng = crate::seed::rng(9);
        let n = 400;
        let mut data = DMatrix::zeros(n, 3);
        for i in 0..n {
            let pt: f64 = StandardNormal.sample(&mut rng);
            let e: f64 = StandardNormal.sample(&mut rng);
            data[(i, 0)] = pt;
            data[(i, 1)] = 0.99 * pt + (1.0 - 0.99f64.powi(2)).sqrt() * e;
            data[(i, 2)] = StandardNormal.sample(&mut rng);
        }
        // INR listed first so max-VIF tie-breaking alone would not pick it reliably
        let x = fm(data.select_columns(&[1, 0, 2]), &["INR", "PT", "Lactate"]);
        let report = resolve_collinearity(&x, &VifConfig::default());
        assert_eq!(report.drop_sequence.len(), 1);
        assert_eq!(report.drop_sequence[0].dropped, "INR");
        assert_eq!(report.drop_sequence[0].kept_instead.as_deref(), Some("PT"));
        assert_eq!(report.kept, vec!["PT".to_string(), "Lactate".to_string()]);
        assert!(report.final_vifs.iter().all(|(_, v)| *v < 10.0));
    }

    #[test]
    fn constant_column_is_infinite_and_dropped_first() {
        let mut rng = crate::seed::rng(2);
        let data = DMatrix::from_fn(30, 3, |_, j| if j == 1 { 4.0 } else { StandardNormal.sample(&mut rng) });
        let x = fm(data, &["a", "k", "b"]);
        assert!(vif(&x)[1].is_infinite());
        let report = resolve_collinearity(&x, &VifConfig::default());
        assert_eq!(report.drop_sequence[0].dropped, "k");
    }
}
