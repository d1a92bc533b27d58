use rayon::prelude::*;

use super::{fit_logistic_raw, GlmError};
use crate::matrix::FeatureMatrix;

/// One row of the univariate screening table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenRow {
    pub variable: String,
    pub coef: f64,
    pub p: f64,
    pub significant: bool,
    /// Set when the single-predictor fit failed; such rows are never significant.
    pub reason: Option<String>,
}

/// Fits one single-predictor logistic model per column and flags p < `alpha`.
pub fn univariate_screen(x: &FeatureMatrix, y: &[f64], alpha: f64) -> Vec<ScreenRow> {
    (0..x.ncols())
        .into_par_iter()
        .map(|j| {
            let col = x.data.columns(j, 1).into_owned();
            let variable = x.names[j].clone();
            match fit_logistic_raw(&col, std::slice::from_ref(&variable), y) {
                Ok(fit) => ScreenRow {
                    coef: fit.coef[1],
                    p: fit.p[1],
                    significant: fit.p[1] < alpha,
                    reason: (!fit.converged).then(|| "not converged".to_string()),
                    variable,
                },
                Err(e) => {
                    let coef = match &e {
                        GlmError::Separation { fit } => fit.coef[1],
                        _ => f64::NAN,
                    };
                    ScreenRow { variable, coef, p: 1.0, significant: false, reason: Some(e.to_string()) }
                }
            }
        })
        .collect()
}

/// Union of the two selections: LASSO names first, then unseen GBT names.
pub fn consolidate_features(lasso_set: &[String], gbt_set: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(lasso_set.len() + gbt_set.len());
    for name in lasso_set.iter().chain(gbt_set) {
        if !out.contains(name) {
            out.push(name.clone());
        }
    }
    out
}
