//! L1-penalized logistic regression by cyclic coordinate descent, k-fold
//! cross-validated deviance curves and the λ selection rules.
//!
//! The objective is `(1/n)·Σ logistic_loss + λ·Σ|β_j|` with an unpenalized
//! intercept. Each outer step solves the penalized IRLS quadratic model by
//! coordinate descent; zeros come out exact through soft-thresholding.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{bernoulli_loglik, sigmoid};
use crate::matrix::FeatureMatrix;

#[derive(Debug, Error)]
pub enum LassoError {
    #[error("coordinate descent did not converge at lambda={lambda} after {sweeps} sweeps")]
    NonConvergence { lambda: f64, sweeps: usize },
    #[error("fold {fold} lacks one of the outcome classes")]
    DegenerateFold { fold: usize },
    #[error("outcome must be binary 0/1 with both classes present")]
    BadOutcome,
    #[error("design has {rows} rows but outcome has {outcome}")]
    DimensionMismatch { rows: usize, outcome: usize },
}

pub type Result<T> = std::result::Result<T, LassoError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdOptions {
    /// Convergence threshold on `maxⱼ curvatureⱼ·Δβⱼ²`, applied to the inner
    /// sweeps and to the outer Newton steps.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for CdOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_sweeps: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub lambda: f64,
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub sweeps: usize,
}

impl LassoFit {
    pub fn zeros(p: usize, lambda: f64) -> Self {
        Self { lambda, intercept: 0.0, coef: vec![0.0; p], sweeps: 0 }
    }

    pub fn nonzero(&self) -> usize {
        self.coef.iter().filter(|&&b| b != 0.0).count()
    }

    pub fn linear_predictor(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut eta = vec![self.intercept; x.nrows()];
        for (j, &b) in self.coef.iter().enumerate() {
            if b != 0.0 {
                for (e, &v) in eta.iter_mut().zip(x.column(j).iter()) {
                    *e += b * v;
                }
            }
        }
        eta
    }
}

fn check(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(LassoError::DimensionMismatch { rows: x.nrows(), outcome: y.len() });
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(LassoError::BadOutcome);
    }
    Ok(())
}

/// Smallest λ at which every penalized coefficient is zero:
/// `max_j |x_jᵀ(y − ȳ)| / n`.
pub fn lambda_max(x: &DMatrix<f64>, y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    (0..x.ncols())
        .map(|j| x.column(j).iter().zip(y).map(|(v, yi)| v * (yi - ybar)).sum::<f64>().abs() / n)
        .fold(0.0, f64::max)
}

/// `size` log-spaced values from `lmax` down to `lmax * min_ratio`.
pub fn lambda_grid(lmax: f64, size: usize, min_ratio: f64) -> Vec<f64> {
    if size == 1 {
        return vec![lmax];
    }
    let (hi, lo) = (lmax.ln(), (lmax * min_ratio).ln());
    (0..size).map(|k| (hi + (lo - hi) * k as f64 / (size - 1) as f64).exp()).collect()
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Floor on the IRLS weights so near-separated rows keep a usable curvature.
const MIN_WEIGHT: f64 = 1e-5;

fn penalized_objective(x: &DMatrix<f64>, y: &[f64], fit: &LassoFit) -> f64 {
    let eta = fit.linear_predictor(x);
    let nll = -eta.iter().zip(y).map(|(&e, &yi)| bernoulli_loglik(yi, e)).sum::<f64>() / y.len() as f64;
    nll + fit.lambda * fit.coef.iter().map(|b| b.abs()).sum::<f64>()
}

/// Coordinate descent on the weighted least-squares approximation around the
/// current fit, in covariance form: the weighted Gram matrix of the intercept
/// and `coords` is built once, so each sweep costs O(|coords|²). Returns the
/// minimizer of the quadratic model, the curvatures `(Σw/n, xⱼᵀWxⱼ/n)` and
/// the sweeps used.
fn quadratic_step(
    x: &DMatrix<f64>,
    y: &[f64],
    fit: &LassoFit,
    coords: &[usize],
    tol: f64,
    budget: usize,
) -> (LassoFit, f64, Vec<f64>, usize) {
    let n = y.len();
    let nf = n as f64;
    let eta = fit.linear_predictor(x);
    let k = coords.len() + 1;
    // rows scaled by √w; column 0 is the intercept
    let mut a = DMatrix::<f64>::zeros(n, k);
    let mut zt = vec![0.0; n];
    let mut sqw = vec![0.0; n];
    for i in 0..n {
        let p = sigmoid(eta[i]);
        let wi = (p * (1.0 - p)).max(MIN_WEIGHT);
        let sq = wi.sqrt();
        a[(i, 0)] = sq;
        sqw[i] = sq;
        // working response with the fixed part of η removed
        let mut fixed = eta[i] - fit.intercept;
        for &j in coords {
            fixed -= fit.coef[j] * x[(i, j)];
        }
        zt[i] = sq * (eta[i] + (y[i] - p) / wi - fixed);
    }
    for (c, &j) in coords.iter().enumerate() {
        let src = x.column(j);
        let mut dst = a.column_mut(c + 1);
        for i in 0..n {
            dst[i] = src[i] * sqw[i];
        }
    }
    let gram = a.tr_mul(&a) / nf;
    let rhs = a.tr_mul(&nalgebra::DVector::from_vec(zt)) / nf;

    let mut b: Vec<f64> = std::iter::once(fit.intercept).chain(coords.iter().map(|&j| fit.coef[j])).collect();
    // q = rhs − G·b, the negative gradient of the quadratic model
    let mut q: Vec<f64> = (0..k).map(|r| rhs[r] - (0..k).map(|c| gram[(r, c)] * b[c]).sum::<f64>()).collect();
    let lambda = fit.lambda;
    let update = |c: usize, b: &mut Vec<f64>, q: &mut Vec<f64>| -> f64 {
        let g = gram[(c, c)];
        if g <= 0.0 {
            return 0.0;
        }
        let z = q[c] + g * b[c];
        let new = if c == 0 { z / g } else { soft_threshold(z, lambda) / g };
        let delta = new - b[c];
        if delta == 0.0 {
            return 0.0;
        }
        b[c] = new;
        for (r, qr) in q.iter_mut().enumerate() {
            *qr -= gram[(r, c)] * delta;
        }
        g * delta * delta
    };

    let inner_tol = tol * 1e-2;
    let mut sweeps = 0;
    while sweeps < budget {
        sweeps += 1;
        let change = (0..k).map(|c| update(c, &mut b, &mut q)).fold(0.0, f64::max);
        if change < inner_tol {
            break;
        }
        while sweeps < budget {
            sweeps += 1;
            let active: Vec<usize> = (0..k).filter(|&c| c == 0 || b[c] != 0.0).collect();
            let change = active.into_iter().map(|c| update(c, &mut b, &mut q)).fold(0.0, f64::max);
            if change < inner_tol {
                break;
            }
        }
    }
    let mut cand = fit.clone();
    cand.intercept = b[0];
    let mut curv = vec![0.0; x.ncols()];
    for (c, &j) in coords.iter().enumerate() {
        cand.coef[j] = b[c + 1];
        curv[j] = gram[(c + 1, c + 1)];
    }
    (cand, gram[(0, 0)], curv, sweeps)
}

/// Fits at a single λ starting from `warm` (or zeros) by proximal Newton:
/// an IRLS quadratic model solved by coordinate descent, with step halving
/// whenever the penalized objective would increase.
pub fn fit_lasso_from(
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    warm: Option<&LassoFit>,
    opts: &CdOptions,
) -> Result<LassoFit> {
    check(x, y)?;
    let all: Vec<usize> = (0..x.ncols()).collect();
    fit_on(x, y, lambda, warm, &all, opts)
}

/// Proximal Newton restricted to `coords`; other coefficients stay as given.
fn fit_on(
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    warm: Option<&LassoFit>,
    coords: &[usize],
    opts: &CdOptions,
) -> Result<LassoFit> {
    let p = x.ncols();
    let mut fit = match warm {
        Some(w) => LassoFit { lambda, sweeps: 0, ..w.clone() },
        None => {
            let ybar = y.iter().sum::<f64>() / y.len() as f64;
            let mut f = LassoFit::zeros(p, lambda);
            if ybar > 0.0 && ybar < 1.0 {
                f.intercept = (ybar / (1.0 - ybar)).ln();
            }
            f
        }
    };
    let mut obj = penalized_objective(x, y, &fit);
    let mut sweeps = 0;
    loop {
        let (mut cand, c0, curv, used) = quadratic_step(x, y, &fit, coords, opts.tol, opts.max_sweeps - sweeps);
        sweeps += used;
        let mut cand_obj = penalized_objective(x, y, &cand);
        let mut t = 1.0;
        while cand_obj > obj + 1e-14 * obj.abs().max(1.0) && t > 1e-6 {
            t *= 0.5;
            cand.intercept = fit.intercept + t * (cand.intercept - fit.intercept);
            for &j in coords {
                cand.coef[j] = fit.coef[j] + t * (cand.coef[j] - fit.coef[j]);
            }
            cand_obj = penalized_objective(x, y, &cand);
        }
        let change = coords
            .iter()
            .map(|&j| curv[j] * (cand.coef[j] - fit.coef[j]).powi(2))
            .fold(c0 * (cand.intercept - fit.intercept).powi(2), f64::max);
        // no decrease at floating-point precision: the current fit is optimal
        let stalled = cand_obj >= obj;
        if !stalled {
            fit = cand;
            obj = cand_obj;
        }
        if stalled || change < opts.tol {
            break;
        }
        if sweeps >= opts.max_sweeps {
            return Err(LassoError::NonConvergence { lambda, sweeps });
        }
    }
    fit.sweeps = sweeps;
    Ok(fit)
}

/// `|x_jᵀ(y − p)|/n` for every column at the given fit.
fn abs_gradient(x: &DMatrix<f64>, y: &[f64], fit: &LassoFit) -> Vec<f64> {
    let n = y.len() as f64;
    let resid: Vec<f64> = fit.linear_predictor(x).iter().zip(y).map(|(&e, &yi)| yi - sigmoid(e)).collect();
    (0..x.ncols()).map(|j| x.column(j).iter().zip(&resid).map(|(v, r)| v * r).sum::<f64>().abs() / n).collect()
}

/// Fit at `lambda` warm-started from the solution at `prev_lambda`, sweeping
/// only the sequential strong set and re-admitting any column that violates
/// the KKT condition afterwards. The result matches the unscreened fit.
fn fit_screened(
    x: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    prev: &LassoFit,
    opts: &CdOptions,
) -> Result<LassoFit> {
    let p = x.ncols();
    let grad = abs_gradient(x, y, prev);
    let cut = 2.0 * lambda - prev.lambda;
    let mut in_set: Vec<bool> = (0..p).map(|j| prev.coef[j] != 0.0 || grad[j] >= cut).collect();
    let mut sweeps = 0;
    let mut start = prev.clone();
    loop {
        let coords: Vec<usize> = (0..p).filter(|&j| in_set[j]).collect();
        let mut fit = fit_on(x, y, lambda, Some(&start), &coords, opts)?;
        sweeps += fit.sweeps;
        let grad = abs_gradient(x, y, &fit);
        let violators: Vec<usize> = (0..p).filter(|&j| !in_set[j] && grad[j] > lambda * (1.0 + 1e-9)).collect();
        if violators.is_empty() {
            fit.sweeps = sweeps;
            return Ok(fit);
        }
        for j in violators {
            in_set[j] = true;
        }
        start = fit;
    }
}

/// Fits at a single λ from a cold start.
pub fn fit_lasso(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<LassoFit> {
    fit_lasso_from(x, y, lambda, None, &CdOptions::default())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoPath {
    pub lambda_grid: Vec<f64>,
    pub fits: Vec<LassoFit>,
}

impl LassoPath {
    pub fn nonzero_counts(&self) -> Vec<usize> {
        self.fits.iter().map(LassoFit::nonzero).collect()
    }
}

/// Fraction of null deviance explained beyond which the path is saturated.
pub const SATURATION: f64 = 0.999;

/// Warm-started fits along a descending λ grid. Once a fit explains
/// `SATURATION` of the null deviance the remaining λ reuse it.
pub fn lasso_path(x: &DMatrix<f64>, y: &[f64], grid: &[f64], opts: &CdOptions) -> Result<LassoPath> {
    check(x, y)?;
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    let null_dev = if ybar > 0.0 && ybar < 1.0 { -2.0 * (ybar * ybar.ln() + (1.0 - ybar) * (1.0 - ybar).ln()) } else { 0.0 };
    let mut fits: Vec<LassoFit> = Vec::with_capacity(grid.len());
    let mut saturated = false;
    for &lambda in grid {
        if saturated {
            let last = fits.last().expect("saturation follows a fit");
            fits.push(LassoFit { lambda, sweeps: 0, ..last.clone() });
            continue;
        }
        let fit = match fits.last() {
            Some(prev) => fit_screened(x, y, lambda, prev, opts)?,
            None => fit_lasso_from(x, y, lambda, None, opts)?,
        };
        let dev = binomial_deviance(y, &fit.linear_predictor(x));
        saturated = null_dev > 0.0 && 1.0 - dev / null_dev >= SATURATION;
        fits.push(fit);
    }
    Ok(LassoPath { lambda_grid: grid.to_vec(), fits })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaRule {
    Min,
    OneSe,
    Pct75,
}

impl std::str::FromStr for LambdaRule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "min" => Ok(LambdaRule::Min),
            "1se" => Ok(LambdaRule::OneSe),
            "pct75" => Ok(LambdaRule::Pct75),
            other => Err(format!("unknown lambda rule `{other}` (expected min, 1se or pct75)")),
        }
    }
}

impl LambdaRule {
    pub fn as_str(self) -> &'static str {
        match self {
            LambdaRule::Min => "min",
            LambdaRule::OneSe => "1se",
            LambdaRule::Pct75 => "pct75",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    pub grid_size: usize,
    pub min_ratio: f64,
    pub seed: u64,
    pub rule: LambdaRule,
    pub cd: CdOptions,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 10, grid_size: 100, min_ratio: 1e-4, seed: 42, rule: LambdaRule::Pct75, cd: CdOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvCurve {
    pub lambda_grid: Vec<f64>,
    pub mean_deviance: Vec<f64>,
    pub se_deviance: Vec<f64>,
    /// Held-out deviance per fold (outer) per λ (inner).
    pub fold_deviance: Vec<Vec<f64>>,
    pub lambda_min: f64,
    pub lambda_1se: f64,
    pub lambda_selected: f64,
    pub rule: LambdaRule,
    pub fold_count: usize,
    pub seed: u64,
}

/// Stratified fold labels. Rows of each class are ordered by `row_ids`
/// before the seeded shuffle, so assignments follow row identity and not
/// input position.
pub fn stratified_folds(y: &[f64], row_ids: &[u64], k: usize, seed: u64) -> Result<Vec<usize>> {
    let mut fold = vec![0; y.len()];
    let mut rng = crate::seed::rng(seed);
    for class in [0.0, 1.0] {
        let mut rows: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        if rows.len() < k {
            return Err(LassoError::DegenerateFold { fold: rows.len() });
        }
        rows.sort_by_key(|&i| row_ids[i]);
        rows.shuffle(&mut rng);
        for (pos, &i) in rows.iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok(fold)
}

/// Binomial deviance −2·mean log-likelihood of held-out rows.
pub fn binomial_deviance(y: &[f64], eta: &[f64]) -> f64 {
    -2.0 * y.iter().zip(eta).map(|(&yi, &e)| bernoulli_loglik(yi, e)).sum::<f64>() / y.len() as f64
}

/// Grid floor used when the fold training sets are no taller than wide.
pub const WIDE_MIN_RATIO: f64 = 0.01;

/// k-fold cross-validated binomial deviance along a log-spaced λ grid.
pub fn cv_deviance(x: &DMatrix<f64>, y: &[f64], row_ids: &[u64], cfg: &CvConfig) -> Result<CvCurve> {
    check(x, y)?;
    let folds = stratified_folds(y, row_ids, cfg.folds, cfg.seed)?;
    let mut min_ratio = cfg.min_ratio;
    if x.ncols() >= x.nrows() * (cfg.folds - 1) / cfg.folds && min_ratio < WIDE_MIN_RATIO {
        log::warn!("{} features for {} rows; lambda grid floor raised to {WIDE_MIN_RATIO}", x.ncols(), x.nrows());
        min_ratio = WIDE_MIN_RATIO;
    }
    let grid = lambda_grid(lambda_max(x, y), cfg.grid_size, min_ratio);

    let fold_deviance = (0..cfg.folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
            let xt = x.select_rows(&train);
            let yt: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let xv = x.select_rows(&test);
            let yv: Vec<f64> = test.iter().map(|&i| y[i]).collect();
            if yv.iter().all(|&v| v == yv[0]) {
                return Err(LassoError::DegenerateFold { fold: f });
            }
            let path = lasso_path(&xt, &yt, &grid, &cfg.cd)?;
            Ok(path.fits.iter().map(|fit| binomial_deviance(&yv, &fit.linear_predictor(&xv))).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;

    let k = cfg.folds as f64;
    let mut mean_deviance = Vec::with_capacity(grid.len());
    let mut se_deviance = Vec::with_capacity(grid.len());
    for l in 0..grid.len() {
        let vals: Vec<f64> = fold_deviance.iter().map(|d| d[l]).collect();
        let m = vals.iter().sum::<f64>() / k;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (k - 1.0);
        mean_deviance.push(m);
        se_deviance.push((var / k).sqrt());
    }
    let (lambda_min, lambda_1se) = min_and_1se(&grid, &mean_deviance, &se_deviance);
    let mut curve = CvCurve {
        lambda_grid: grid,
        mean_deviance,
        se_deviance,
        fold_deviance,
        lambda_min,
        lambda_1se,
        lambda_selected: lambda_min,
        rule: cfg.rule,
        fold_count: cfg.folds,
        seed: cfg.seed,
    };
    curve.lambda_selected = select_lambda(&curve, cfg.rule);
    Ok(curve)
}

/// λ with minimum mean deviance (largest λ on ties) and the largest λ whose
/// mean deviance is within one SE of that minimum.
pub fn min_and_1se(grid: &[f64], mean: &[f64], se: &[f64]) -> (f64, f64) {
    let mut best = 0;
    for l in 1..grid.len() {
        if mean[l] < mean[best] {
            best = l;
        }
    }
    let bound = mean[best] + se[best];
    let lambda_1se = grid
        .iter()
        .zip(mean)
        .filter(|(_, &m)| m <= bound)
        .map(|(&l, _)| l)
        .fold(grid[best], f64::max);
    (grid[best], lambda_1se)
}

pub fn select_lambda(curve: &CvCurve, rule: LambdaRule) -> f64 {
    match rule {
        LambdaRule::Min => curve.lambda_min,
        LambdaRule::OneSe => curve.lambda_1se,
        LambdaRule::Pct75 => {
            if curve.lambda_min == curve.lambda_1se {
                return curve.lambda_min;
            }
            let (lo, hi) = (curve.lambda_min.ln(), curve.lambda_1se.ln());
            (lo + 0.75 * (hi - lo)).exp()
        }
    }
}

/// Refits on all rows at `lambda` (warm-started down the grid from λ_max) and
/// returns the fit together with the names of its nonzero coefficients.
pub fn refit_selected(x: &FeatureMatrix, y: &[f64], lambda: f64, opts: &CdOptions) -> Result<(LassoFit, Vec<String>)> {
    let lmax = lambda_max(&x.data, y);
    let mut warm: Option<LassoFit> = None;
    if lambda < lmax {
        for l in lambda_grid(lmax, 100, 1e-4).into_iter().take_while(|&l| l > lambda) {
            warm = Some(fit_lasso_from(&x.data, y, l, warm.as_ref(), opts)?);
        }
    }
    let fit = fit_lasso_from(&x.data, y, lambda, warm.as_ref(), opts)?;
    let names = fit
        .coef
        .iter()
        .zip(&x.names)
        .filter(|(&b, _)| b != 0.0)
        .map(|(_, n)| n.clone())
        .collect();
    Ok((fit, names))
}

pub fn selected_features(x: &FeatureMatrix, y: &[f64], lambda: f64) -> Result<Vec<String>> {
    Ok(refit_selected(x, y, lambda, &CdOptions::default())?.1)
}
