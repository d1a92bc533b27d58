//! Small dense linear-algebra helpers shared by the model fitters.

use nalgebra::{DMatrix, DVector};

/// Solves `a x = b` for symmetric positive-definite `a` via Cholesky.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let chol = a.clone().cholesky()?;
    Some(chol.solve(b))
}

/// Inverse of a symmetric positive-definite matrix.
pub fn inverse_spd(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = a.clone().cholesky()?;
    Some(chol.inverse())
}

/// Moore–Penrose solve of a symmetric positive semi-definite system,
/// treating eigenvalues below `rel_tol * max_eigenvalue` as zero.
pub fn solve_psd_pinv(a: &DMatrix<f64>, b: &DVector<f64>, rel_tol: f64) -> DVector<f64> {
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let cutoff = rel_tol * max;
    let qtb = eig.eigenvectors.transpose() * b;
    let scaled = DVector::from_iterator(
        qtb.len(),
        qtb.iter().zip(eig.eigenvalues.iter()).map(|(&v, &l)| if l > cutoff { v / l } else { 0.0 }),
    );
    &eig.eigenvectors * scaled
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Bernoulli log-likelihood of label `y` under linear predictor `eta`,
/// computed without forming the probability.
pub fn bernoulli_loglik(y: f64, eta: f64) -> f64 {
    // log(1 + e^eta) evaluated stably
    let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
    y * eta - softplus
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample variance (denominator n - 1).
pub fn sample_var(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}
