use nalgebra::{DMatrix, DVector};

use super::TextError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    /// Truncated SVD of the raw matrix.
    Svd,
    /// Principal components of the column-centered matrix.
    Pca,
}

impl ReduceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ReduceKind::Svd => "svd",
            ReduceKind::Pca => "pca",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBasis {
    pub kind: ReduceKind,
    /// `retained x p`, orthonormal rows.
    pub components: DMatrix<f64>,
    /// Fraction of total (uncentered for svd) variance per retained component.
    pub explained_ratio: Vec<f64>,
    pub singular_values: Vec<f64>,
    /// Column means, pca only.
    pub center: Option<DVector<f64>>,
    pub retained: usize,
}

const RESIDUAL_TOL: f64 = 1e-8;

impl ReducedBasis {
    pub fn cumulative_ratio(&self) -> f64 {
        self.explained_ratio.iter().sum()
    }

    /// Projects rows of `x` onto the retained components.
    pub fn transform(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = x.clone();
        if let Some(c) = &self.center {
            for mut row in centered.row_iter_mut() {
                row -= c.transpose();
            }
        }
        centered * self.components.transpose()
    }
}

/// Smallest `k` whose cumulative explained ratio reaches `target`.
pub fn retained_count(ratios: &[f64], target: f64) -> usize {
    let mut cum = 0.0;
    for (k, r) in ratios.iter().enumerate() {
        cum += r;
        if cum >= target - 1e-12 {
            return k + 1;
        }
    }
    ratios.len()
}

/// Leading right singular vectors of `x` (after centering for pca), keeping
/// the fewest components whose explained variance reaches `target`. The
/// eigenproblem is solved on whichever Gram matrix is smaller and each kept
/// pair is checked for a relative residual below 1e-8.
pub fn fit_reduced_basis(x: &DMatrix<f64>, kind: ReduceKind, target: f64) -> Result<ReducedBasis, TextError> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(TextError::TooFewRows(n));
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(TextError::InvalidTarget(target));
    }
    let center = match kind {
        ReduceKind::Svd => None,
        ReduceKind::Pca => Some(DVector::from_iterator(p, x.column_iter().map(|c| c.mean()))),
    };
    let mut a = x.clone();
    if let Some(c) = &center {
        for mut row in a.row_iter_mut() {
            row -= c.transpose();
        }
    }
    let total = a.norm_squared();
    if total <= f64::MIN_POSITIVE || !total.is_finite() {
        return Err(TextError::ZeroVariance);
    }

    let wide = n < p;
    let gram = if wide { &a * a.transpose() } else { a.transpose() * &a };
    let eig = gram.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let lmax = eig.eigenvalues[order[0]].max(0.0);

    let positive: Vec<usize> = order.iter().copied().filter(|&i| eig.eigenvalues[i] > lmax * 1e-12).collect();
    let ratios: Vec<f64> = positive.iter().map(|&i| eig.eigenvalues[i] / total).collect();
    let k = retained_count(&ratios, target);

    let mut components = DMatrix::zeros(k, p);
    let mut singular_values = Vec::with_capacity(k);
    for (row, &i) in positive.iter().take(k).enumerate() {
        let lambda = eig.eigenvalues[i];
        let vec = eig.eigenvectors.column(i);
        let residual = (&gram * vec - vec * lambda).norm() / lmax;
        if residual > RESIDUAL_TOL {
            return Err(TextError::ConvergenceFailure { component: row, residual });
        }
        let sigma = lambda.sqrt();
        let mut v: DVector<f64> = if wide { a.transpose() * vec / sigma } else { vec.into_owned() };
        v /= v.norm();
        // deterministic sign: largest-magnitude loading positive
        let (imax, _) = v.iter().enumerate().fold((0, 0.0), |acc, (j, &x)| if x.abs() > acc.1 { (j, x.abs()) } else { acc });
        if v[imax] < 0.0 {
            v = -v;
        }
        components.set_row(row, &v.transpose());
        singular_values.push(sigma);
    }
    Ok(ReducedBasis {
        kind,
        components,
        explained_ratio: ratios[..k].to_vec(),
        singular_values,
        center,
        retained: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::seed::rng(seed);
        DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    /// Explained ratios from a full dense SVD of the (centered) matrix.
    fn oracle(x: &DMatrix<f64>, center: bool) -> Vec<f64> {
        let mut a = x.clone();
        if center {
            let means: Vec<f64> = a.column_iter().map(|c| c.mean()).collect();
            for (j, m) in means.iter().enumerate() {
                a.column_mut(j).add_scalar_mut(-m);
            }
        }
        let mut s: Vec<f64> = a.svd(false, false).singular_values.iter().map(|v| v * v).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        let total: f64 = s.iter().sum();
        s.iter().map(|v| v / total).collect()
    }

    #[test]
    fn rank_one_keeps_one_component() {
        let u = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]);
        let v = DVector::from_vec(vec![3.0, 0.0, 1.0]);
        let b = fit_reduced_basis(&(&u * v.transpose()), ReduceKind::Svd, 0.8).unwrap();
        assert_eq!(b.retained, 1);
        assert!((b.explained_ratio[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn isotropic_gaussian_needs_both_axes() {
        let b = fit_reduced_basis(&random(400, 2, 3), ReduceKind::Pca, 0.9).unwrap();
        assert_eq!(b.retained, 2);
    }

    #[test]
    fn agrees_with_dense_svd_oracle() {
        for (seed, (n, p)) in [(1u64, (30, 12)), (2, (12, 30)), (3, (50, 50)), (4, (20, 8))] {
            // give the spectrum some decay
            let mut x = random(n, p, seed);
            for j in 0..p {
                x.column_mut(j).scale_mut(1.0 / (1.0 + j as f64));
            }
            for (kind, center, target) in [(ReduceKind::Svd, false, 0.8), (ReduceKind::Pca, true, 0.9)] {
                let b = fit_reduced_basis(&x, kind, target).unwrap();
                let want = oracle(&x, center);
                assert_eq!(b.retained, retained_count(&want, target));
                for (got, exp) in b.explained_ratio.iter().zip(&want) {
                    assert!((got - exp).abs() < 1e-6);
                }
                if b.retained > 1 {
                    assert!(b.explained_ratio[..b.retained - 1].iter().sum::<f64>() < target);
                }
                let gram = &b.components * b.components.transpose();
                assert!((gram - DMatrix::identity(b.retained, b.retained)).abs().max() < 1e-8);
            }
        }
    }

    #[test]
    fn reconstruction_error_matches_discarded_variance() {
        let mut x = random(40, 10, 9);
        for j in 0..10 {
            x.column_mut(j).scale_mut(0.7f64.powi(j as i32));
        }
        let b = fit_reduced_basis(&x, ReduceKind::Svd, 0.8).unwrap();
        let recon = b.transform(&x) * &b.components;
        let err = (&x - recon).norm_squared() / x.norm_squared();
        assert!((err - (1.0 - b.cumulative_ratio())).abs() < 1e-6);
    }

    #[test]
    fn zero_rows_project_to_zero_without_centering() {
        let b = fit_reduced_basis(&random(20, 6, 4), ReduceKind::Svd, 0.8).unwrap();
        assert!(b.transform(&DMatrix::zeros(2, 6)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(fit_reduced_basis(&DMatrix::zeros(5, 3), ReduceKind::Svd, 0.8), Err(TextError::ZeroVariance)));
        let constant = DMatrix::from_element(5, 3, 2.0);
        assert!(matches!(fit_reduced_basis(&constant, ReduceKind::Pca, 0.9), Err(TextError::ZeroVariance)));
        assert!(matches!(fit_reduced_basis(&random(1, 3, 1), ReduceKind::Svd, 0.8), Err(TextError::TooFewRows(1))));
        assert!(fit_reduced_basis(&random(5, 3, 1), ReduceKind::Svd, 1.5).is_err());
    }
}
