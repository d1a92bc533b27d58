//! Logistic regression with Wald inference, univariate screening and
//! VIF-based collinearity resolution.

mod screen;
mod vif;

pub use screen::{consolidate_features, univariate_screen, ScreenRow};
pub use vif::{resolve_collinearity, vif, VifConfig, VifDrop, VifReport};

use nalgebra::{DMatrix, DVector};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::linalg::{bernoulli_loglik, inverse_spd, sigmoid, solve_spd};
use crate::matrix::FeatureMatrix;

pub const INTERCEPT: &str = "const";
/// Two-sided 97.5% standard-normal quantile.
pub const Z_975: f64 = 1.959964;

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-8;
/// Linear predictors beyond this put fitted probabilities at 0/1 in double precision.
const SEPARATION_ETA: f64 = 36.0;

#[derive(Debug, Error)]
pub enum GlmError {
    #[error("outcome must be binary 0/1")]
    NotBinary,
    #[error("design has {rows} rows but outcome has {outcome}")]
    DimensionMismatch { rows: usize, outcome: usize },
    #[error("design contains missing or non-finite cells")]
    NonFinite,
    #[error("perfect or quasi-complete separation detected")]
    Separation { fit: Box<GlmFit> },
    #[error("information matrix is singular")]
    SingularHessian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    /// Coefficient names, intercept first.
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub loglik: f64,
    pub loglik_null: f64,
    pub pseudo_r2: f64,
    pub n: usize,
    pub converged: bool,
    pub iterations: usize,
}

impl GlmFit {
    /// Linear predictor for the rows of `x` (no intercept column).
    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> Vec<f64> {
        (0..x.nrows())
            .map(|i| self.coef[0] + (0..x.ncols()).map(|j| self.coef[j + 1] * x[(i, j)]).sum::<f64>())
            .collect()
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.linear_predictor(x).into_iter().map(sigmoid).collect()
    }
}

/// Two-sided normal tail probability.
pub fn wald_p(z: f64) -> f64 {
    if !z.is_finite() {
        return if z.is_nan() { 1.0 } else { 0.0 };
    }
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Intercept-only log-likelihood for the outcome vector.
pub fn null_loglik(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    if ybar <= 0.0 || ybar >= 1.0 {
        return 0.0;
    }
    n * (ybar * ybar.ln() + (1.0 - ybar) * (1.0 - ybar).ln())
}

fn validate(x: &DMatrix<f64>, y: &[f64]) -> Result<(), GlmError> {
    if x.nrows() != y.len() {
        return Err(GlmError::DimensionMismatch { rows: x.nrows(), outcome: y.len() });
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(GlmError::NotBinary);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(GlmError::NonFinite);
    }
    Ok(())
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::from_element(x.nrows(), x.ncols() + 1, 1.0);
    d.view_mut((0, 1), (x.nrows(), x.ncols())).copy_from(x);
    d
}

struct State {
    eta: DVector<f64>,
    loglik: f64,
}

fn evaluate(design: &DMatrix<f64>, beta: &DVector<f64>, y: &[f64]) -> State {
    let eta = design * beta;
    let loglik = eta.iter().zip(y).map(|(&e, &yi)| bernoulli_loglik(yi, e)).sum();
    State { eta, loglik }
}

/// Information matrix XᵀWX and score Xᵀ(y − p).
fn information(design: &DMatrix<f64>, eta: &DVector<f64>, y: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let n = design.nrows();
    let mut weighted = design.clone();
    let mut resid = DVector::zeros(n);
    for i in 0..n {
        let p = sigmoid(eta[i]);
        let w = p * (1.0 - p);
        weighted.row_mut(i).scale_mut(w);
        resid[i] = y[i] - p;
    }
    (design.transpose() * weighted, design.transpose() * resid)
}

fn solve_with_jitter(info: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    solve_spd(info, rhs).or_else(|| {
        let jittered = info + DMatrix::identity(info.nrows(), info.ncols()) * 1e-8;
        solve_spd(&jittered, rhs)
    })
}

/// Maximum-likelihood logistic regression by Newton/IRLS with step halving.
pub fn fit_logistic(x: &FeatureMatrix, y: &[f64]) -> Result<GlmFit, GlmError> {
    fit_logistic_raw(&x.data, &x.names, y)
}

pub fn fit_logistic_raw(x: &DMatrix<f64>, names: &[String], y: &[f64]) -> Result<GlmFit, GlmError> {
    validate(x, y)?;
    let n = y.len();
    let design = with_intercept(x);
    let k = design.ncols();
    let mut beta = DVector::zeros(k);
    let ybar = y.iter().sum::<f64>() / n.max(1) as f64;
    if ybar > 0.0 && ybar < 1.0 {
        beta[0] = (ybar / (1.0 - ybar)).ln();
    }
    let mut state = evaluate(&design, &beta, y);
    let mut converged = false;
    let mut separated = false;
    let mut iterations = 0;

    while iterations < MAX_ITER {
        let (info, score) = information(&design, &state.eta, y);
        if score.amax() / n as f64 <= SCORE_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let step = solve_with_jitter(&info, &score).ok_or(GlmError::SingularHessian)?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let trial = &beta + &step * t;
            let next = evaluate(&design, &trial, y);
            if next.loglik >= state.loglik - 1e-12 * state.loglik.abs() {
                beta = trial;
                state = next;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if state.eta.amax() > SEPARATION_ETA {
            separated = true;
            break;
        }
        if !accepted {
            // No ascent possible in floating point: stalled at the optimum.
            let (_, score) = information(&design, &state.eta, y);
            converged = score.amax() / n as f64 <= 1e-6;
            break;
        }
    }

    let (info, _) = information(&design, &state.eta, y);
    let cov = inverse_spd(&info)
        .or_else(|| inverse_spd(&(&info + DMatrix::identity(k, k) * 1e-8)))
        .ok_or(GlmError::SingularHessian);
    let se: Vec<f64> = match &cov {
        Ok(c) => (0..k).map(|j| c[(j, j)].max(0.0).sqrt()).collect(),
        Err(_) if separated => vec![f64::INFINITY; k],
        Err(_) => return Err(GlmError::SingularHessian),
    };
    let coef: Vec<f64> = beta.iter().copied().collect();
    let z: Vec<f64> = coef.iter().zip(&se).map(|(c, s)| c / s).collect();
    let p = z.iter().map(|&z| wald_p(z)).collect();
    let loglik_null = null_loglik(y);
    if x.ncols() == 0 && converged {
        // the intercept-only optimum is the closed-form null likelihood
        state.loglik = loglik_null;
    }
    let pseudo_r2 = if loglik_null < 0.0 { 1.0 - state.loglik / loglik_null } else { 0.0 };
    let mut all_names = Vec::with_capacity(k);
    all_names.push(INTERCEPT.to_string());
    all_names.extend(names.iter().cloned());

    let fit = GlmFit {
        names: all_names,
        ci_low: coef.iter().zip(&se).map(|(c, s)| c - Z_975 * s).collect(),
        ci_high: coef.iter().zip(&se).map(|(c, s)| c + Z_975 * s).collect(),
        coef,
        se,
        z,
        p,
        loglik: state.loglik,
        loglik_null,
        pseudo_r2,
        n,
        converged: converged && !separated,
        iterations,
    };
    if separated {
        return Err(GlmError::Separation { fit: Box::new(fit) });
    }
    if !fit.converged {
        log::warn!("logistic fit did not converge after {iterations} iterations");
    }
    Ok(fit)
}

/// Mean-scaled score vector (1/n)·Xᵀ(y − p) at the given coefficients.
pub fn mean_score(x: &DMatrix<f64>, y: &[f64], coef: &[f64]) -> Vec<f64> {
    let design = with_intercept(x);
    let beta = DVector::from_column_slice(coef);
    let eta = &design * beta;
    let (_, score) = information(&design, &eta, y);
    score.iter().map(|s| s / y.len() as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn fm(data: DMatrix<f64>) -> FeatureMatrix {
        let names = (0..data.ncols()).map(|j| format!("x{j}")).collect();
        FeatureMatrix::new(data, names)
    }

    fn simulate(n: usize, beta: &[f64], seed: u64) -> (DMatrix<f64>, Vec<f64>) {
        let mut rng = crate::seed::rng(seed);
        let p = beta.len() - 1;
        let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
        let y = (0..n)
            .map(|i| {
                let eta = beta[0] + (0..p).map(|j| beta[j + 1] * x[(i, j)]).sum::<f64>();
                if rng.random::<f64>() < sigmoid(eta) { 1.0 } else { 0.0 }
            })
            .collect();
        (x, y)
    }

    #[test]
    fn balanced_outcome_with_zero_column() {
        let x = DMatrix::zeros(10, 1);
        let y: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let fit = fit_logistic(&fm(x), &y).unwrap_or_else(|e| match e {
            GlmError::SingularHessian => panic!("zero column should be handled by jitter"),
            other => panic!("{other}"),
        });
        assert!(fit.coef[0].abs() < 1e-10);
        assert!(fit.p[0] > 0.99);
    }

    #[test]
    fn recovers_generating_coefficient() {
        let (x, y) = simulate(5000, &[0.0, 1.5], 11);
        let fit = fit_logistic(&fm(x), &y).unwrap();
        assert!(fit.converged);
        for (j, truth) in [0.0, 1.5].iter().enumerate() {
            assert!((fit.coef[j] - truth).abs() < 3.0 * fit.se[j], "coef {j}: {} ± {}", fit.coef[j], fit.se[j]);
        }
    }

    #[test]
    fn separation_is_detected() {
        let x = DMatrix::from_column_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let y = vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        match fit_logistic(&fm(x), &y) {
            Err(GlmError::Separation { fit }) => assert!(!fit.converged),
            other => panic!("expected separation, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_binary_outcome() {
        let x = DMatrix::zeros(2, 1);
        assert!(matches!(fit_logistic(&fm(x), &[0.0, 2.0]), Err(GlmError::NotBinary)));
    }

    #[test]
    fn gradient_vanishes_and_intervals_bracket() {
        let (x, y) = simulate(800, &[-0.3, 0.8, -0.5, 0.0], 3);
        let fit = fit_logistic(&fm(x.clone()), &y).unwrap();
        let g = mean_score(&x, &y, &fit.coef);
        assert!(g.iter().all(|v| v.abs() < 1e-6), "{g:?}");
        for j in 0..fit.coef.len() {
            assert!(fit.ci_low[j] <= fit.coef[j] && fit.coef[j] <= fit.ci_high[j]);
            assert!((0.0..=1.0).contains(&fit.p[j]));
        }
        assert!(fit.pseudo_r2 > 0.0 && fit.pseudo_r2 < 1.0);
    }

    #[test]
    fn null_model_pseudo_r2_is_zero() {
        let y: Vec<f64> = (0..30).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
        let fit = fit_logistic_raw(&DMatrix::zeros(30, 0), &[], &y).unwrap();
        assert_eq!(fit.pseudo_r2, 0.0);
        assert!((fit.loglik - fit.loglik_null).abs() < 1e-12 * fit.loglik_null.abs());
    }

    #[test]
    fn wald_agrees_with_likelihood_ratio_band() {
        let (x, y) = simulate(1500, &[0.2, 0.15, 0.6], 21);
        let full = fit_logistic(&fm(x.clone()), &y).unwrap();
        for j in 0..2 {
            let keep: Vec<usize> = (0..2).filter(|&k| k != j).collect();
            let reduced = fit_logistic(&fm(x.select_columns(&keep)), &y).unwrap();
            let lr = 2.0 * (full.loglik - reduced.loglik);
            let p_lr = wald_p(lr.max(0.0).sqrt());
            let p_wald = full.p[j + 1];
            let ratio = (p_lr.max(1e-300).log10() - p_wald.max(1e-300).log10()).abs();
            assert!(ratio < 1.0 || (p_lr < 1e-12 && p_wald < 1e-12), "lr {p_lr} wald {p_wald}");
        }
    }

    #[test]
    fn wald_p_tail_values() {
        assert!((wald_p(Z_975) - 0.05).abs() < 1e-6);
        assert_eq!(wald_p(0.0), 1.0);
    }
}
