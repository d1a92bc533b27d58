//! Missing-data handling: per-variable single imputation, chained-equation
//! multiple imputation and Rubin pooling of per-imputation fits.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::frame::{Column, FrameError, PatientFrame, HADM_ID, STAY_ID, SUBJECT_ID};
use crate::glm::{wald_p, GlmFit, Z_975};
use crate::linalg::{mean, sample_var, solve_spd};
use crate::seed;

#[derive(Debug, Error)]
pub enum ImputeError {
    #[error("column `{0}` has no observed values")]
    AllMissingColumn(String),
    #[error("fit {index} has coefficient layout {got:?}, expected {expected:?}")]
    LayoutMismatch { index: usize, expected: Vec<String>, got: Vec<String> },
    #[error("expected {expected} fits, got {got}")]
    FitCount { expected: usize, got: usize },
    #[error("invalid imputation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImputeMethod {
    Mean,
    Median,
    Mice,
    Zero,
    None,
}

impl ImputeMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ImputeMethod::Mean => "mean",
            ImputeMethod::Median => "median",
            ImputeMethod::Mice => "mice",
            ImputeMethod::Zero => "zero",
            ImputeMethod::None => "none",
        }
    }
}

impl FromStr for ImputeMethod {
    type Err = ImputeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(ImputeMethod::Mean),
            "median" => Ok(ImputeMethod::Median),
            "mice" => Ok(ImputeMethod::Mice),
            "zero" => Ok(ImputeMethod::Zero),
            "none" => Ok(ImputeMethod::None),
            other => Err(ImputeError::InvalidConfig(format!("unknown imputation method `{other}`"))),
        }
    }
}

/// Imputation rule for one variable. A policy on `HR` also covers the
/// aggregated `HR_min` / `HR_max` columns unless those have their own entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImputePolicy {
    pub variable: String,
    pub method: ImputeMethod,
}

impl ImputePolicy {
    pub fn new(variable: &str, method: ImputeMethod) -> Self {
        Self { variable: variable.to_string(), method }
    }
}

/// Vital and lab tiers: low-missingness variables get mean fills, skewed
/// ones the median, and the heavily missing ones wait for chained equations.
pub fn default_policies() -> Vec<ImputePolicy> {
    use ImputeMethod::*;
    let table: [(&str, ImputeMethod); 14] = [
        ("BT", Mice),
        ("Lactate", Mice),
        ("pH", Mice),
        ("PT", Mice),
        ("HR", Mean),
        ("DBP", Mean),
        ("Sodium", Mean),
        ("Bicarbonate", Mean),
        ("SBP", Median),
        ("MBP", Median),
        ("RR", Median),
        ("SpO2", Median),
        ("Creatinine", Median),
        ("Glucose", Median),
    ];
    table.iter().map(|&(v, m)| ImputePolicy::new(v, m)).collect()
}

/// Method for column `name`: an exact entry wins, then the entry for its
/// base variable (`X_min`, `X_max` → `X`), then `fallback`.
pub fn method_for(name: &str, policies: &[ImputePolicy], fallback: ImputeMethod) -> ImputeMethod {
    if let Some(p) = policies.iter().find(|p| p.variable == name) {
        return p.method;
    }
    let base = name.strip_suffix("_min").or_else(|| name.strip_suffix("_max"));
    base.and_then(|b| policies.iter().find(|p| p.variable == b))
        .map_or(fallback, |p| p.method)
}

fn median(mut vals: Vec<f64>) -> f64 {
    vals.sort_by(f64::total_cmp);
    let n = vals.len();
    if n % 2 == 1 {
        vals[n / 2]
    } else {
        (vals[n / 2 - 1] + vals[n / 2]) / 2.0
    }
}

fn fill(col: &Column, value: f64) -> Column {
    let vals = col.as_numeric().expect("numeric column");
    let filled = vals.iter().zip(&col.missing).map(|(&v, &m)| if m { value } else { v }).collect();
    Column::numeric(col.name.clone(), filled)
}

/// Fills masked cells of every policy variable present in `frame` under
/// mean / median / zero rules. Columns with `mice` or `none` are untouched,
/// as are columns without a matching policy.
pub fn impute_single(frame: &PatientFrame, policies: &[ImputePolicy]) -> Result<PatientFrame, ImputeError> {
    for p in policies {
        if !frame.has_column(&p.variable) {
            return Err(FrameError::MissingColumn(p.variable.clone()).into());
        }
    }
    let mut out = frame.clone();
    for col in frame.columns() {
        if !col.is_numeric() || col.missing_count() == 0 {
            continue;
        }
        let observed: Vec<f64> = (0..col.len()).filter_map(|r| col.get(r)).collect();
        let value = match method_for(&col.name, policies, ImputeMethod::None) {
            ImputeMethod::Zero => 0.0,
            ImputeMethod::Mean | ImputeMethod::Median if observed.is_empty() => {
                return Err(ImputeError::AllMissingColumn(col.name.clone()))
            }
            ImputeMethod::Mean => mean(&observed),
            ImputeMethod::Median => median(observed),
            ImputeMethod::Mice | ImputeMethod::None => continue,
        };
        out = out.with_column(fill(col, value))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiceConfig {
    /// Number of completed datasets.
    pub m: usize,
    /// Sweeps over the incomplete columns per dataset.
    pub max_iter: usize,
    pub seed: u64,
    pub ridge_penalty: f64,
    /// Numeric columns kept out of the model entirely (identifiers).
    pub exclude: Vec<String>,
}

impl Default for MiceConfig {
    fn default() -> Self {
        Self {
            m: 5,
            max_iter: 10,
            seed: 42,
            ridge_penalty: 1e-3,
            exclude: vec![SUBJECT_ID.into(), HADM_ID.into(), STAY_ID.into()],
        }
    }
}

impl MiceConfig {
    pub fn validate(&self) -> Result<(), ImputeError> {
        if self.m < 2 {
            return Err(ImputeError::InvalidConfig(format!("m must be at least 2, got {}", self.m)));
        }
        if self.max_iter < 1 {
            return Err(ImputeError::InvalidConfig("max_iter must be at least 1".into()));
        }
        if !(self.ridge_penalty > 0.0 && self.ridge_penalty.is_finite()) {
            return Err(ImputeError::InvalidConfig(format!("ridge_penalty must be positive, got {}", self.ridge_penalty)));
        }
        Ok(())
    }
}

/// Ridge fit of column `target` on every other column of `z` over `rows`,
/// predictors standardized on those rows. Returns predictions for
/// `predict_rows` and the residual standard deviation, or `None` when the
/// system cannot be solved.
fn ridge_predict(
    z: &DMatrix<f64>,
    target: usize,
    rows: &[usize],
    predict_rows: &[usize],
    penalty: f64,
) -> Option<(Vec<f64>, f64)> {
    let predictors: Vec<usize> = (0..z.ncols()).filter(|&j| j != target).collect();
    let n = rows.len();
    let q = predictors.len();
    let y: Vec<f64> = rows.iter().map(|&r| z[(r, target)]).collect();
    let y_mean = mean(&y);

    let mut centers = Vec::with_capacity(q);
    let mut scales = Vec::with_capacity(q);
    for &j in &predictors {
        let v: Vec<f64> = rows.iter().map(|&r| z[(r, j)]).collect();
        let m = mean(&v);
        let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        centers.push(m);
        scales.push(if sd > 1e-12 { sd } else { 1.0 });
    }
    let design = |rs: &[usize]| {
        DMatrix::from_fn(rs.len(), q, |i, k| (z[(rs[i], predictors[k])] - centers[k]) / scales[k])
    };
    let x = design(rows);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
    let mut gram = x.tr_mul(&x);
    for k in 0..q {
        gram[(k, k)] += penalty;
    }
    let beta = solve_spd(&gram, &x.tr_mul(&yc))?;
    if beta.iter().any(|b| !b.is_finite()) {
        return None;
    }
    let resid = &yc - &x * &beta;
    let dof = n.saturating_sub(q + 1).max(1) as f64;
    let sigma = (resid.norm_squared() / dof).sqrt();
    let pred = design(predict_rows) * &beta;
    Some((pred.iter().map(|v| v + y_mean).collect(), sigma))
}

/// Runs `cfg.m` independent chains (chain `k` seeded with `seed + k`) and
/// returns one completed frame per chain. Every numeric column outside
/// `cfg.exclude` is a predictor; those with masked cells are imputed, visited
/// in order of increasing missingness. Observed cells are never changed.
pub fn mice_impute(frame: &PatientFrame, cfg: &MiceConfig) -> Result<Vec<PatientFrame>, ImputeError> {
    cfg.validate()?;
    let cols: Vec<&Column> = frame
        .columns()
        .iter()
        .filter(|c| c.is_numeric() && !cfg.exclude.contains(&c.name))
        .collect();
    if cols.len() < 2 {
        return Err(ImputeError::InvalidConfig(format!("chained equations need at least 2 numeric columns, got {}", cols.len())));
    }
    let n = frame.n_rows();
    let mut z = DMatrix::<f64>::zeros(n, cols.len());
    let mut targets = Vec::new();
    for (j, col) in cols.iter().enumerate() {
        let observed: Vec<f64> = (0..n).filter_map(|r| col.get(r)).collect();
        if observed.is_empty() {
            return Err(ImputeError::AllMissingColumn(col.name.clone()));
        }
        let fill_value = mean(&observed);
        for r in 0..n {
            z[(r, j)] = col.get(r).unwrap_or(fill_value);
        }
        if observed.len() < n {
            targets.push(j);
        }
    }
    if targets.is_empty() {
        return Ok(vec![frame.clone(); cfg.m]);
    }
    targets.sort_by_key(|&j| cols[j].missing_count());
    let obs_rows: Vec<Vec<usize>> = cols.iter().map(|c| (0..n).filter(|&r| !c.missing[r]).collect()).collect();
    let mis_rows: Vec<Vec<usize>> = cols.iter().map(|c| (0..n).filter(|&r| c.missing[r]).collect()).collect();

    let chains: Vec<DMatrix<f64>> = (0..cfg.m)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::rng(cfg.seed.wrapping_add(k as u64));
            let mut z = z.clone();
            let mut fallback_logged = vec![false; cols.len()];
            for _ in 0..cfg.max_iter {
                for &j in &targets {
                    let (obs, mis) = (&obs_rows[j], &mis_rows[j]);
                    match ridge_predict(&z, j, obs, mis, cfg.ridge_penalty) {
                        Some((pred, sigma)) => {
                            let noise = Normal::new(0.0, sigma).unwrap_or_else(|_| Normal::new(0.0, 0.0).unwrap());
                            for (&r, p) in mis.iter().zip(pred) {
                                z[(r, j)] = p + noise.sample(&mut rng);
                            }
                        }
                        None => {
                            if !fallback_logged[j] {
                                log::warn!("singular design imputing `{}`; keeping mean fill", cols[j].name);
                                fallback_logged[j] = true;
                            }
                        }
                    }
                }
            }
            z
        })
        .collect();

    chains
        .into_iter()
        .map(|z| {
            let mut out = frame.clone();
            for &j in &targets {
                out = out.with_column(Column::numeric(cols[j].name.clone(), z.column(j).iter().copied().collect()))?;
            }
            Ok(out)
        })
        .collect()
}

/// Coefficients pooled across imputations. Vectors follow `names`.
#[derive(Debug, Clone, PartialEq)]
pub struct RubinPooled {
    pub names: Vec<String>,
    pub beta_mi: Vec<f64>,
    /// Mean of the squared per-imputation standard errors.
    pub within_var: Vec<f64>,
    /// Sample variance of the per-imputation coefficients.
    pub between_var: Vec<f64>,
    pub total_var: Vec<f64>,
    pub se: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub per_imputation_fits: Vec<GlmFit>,
}

impl RubinPooled {
    pub fn m(&self) -> usize {
        self.per_imputation_fits.len()
    }

    /// Mean of per-imputation pseudo-R².
    pub fn mean_pseudo_r2(&self) -> f64 {
        mean(&self.per_imputation_fits.iter().map(|f| f.pseudo_r2).collect::<Vec<_>>())
    }
}

/// `beta_mi = mean(beta_i)`, `T = V + (1 + 1/m) B`. Wald statistics use the
/// normal reference with `se = sqrt(T)`.
pub fn rubin_pool(fits: &[GlmFit], m: usize) -> Result<RubinPooled, ImputeError> {
    if fits.len() != m || m == 0 {
        return Err(ImputeError::FitCount { expected: m, got: fits.len() });
    }
    let names = fits[0].names.clone();
    for (index, f) in fits.iter().enumerate() {
        if f.names != names || f.coef.len() != names.len() || f.se.len() != names.len() {
            return Err(ImputeError::LayoutMismatch { index, expected: names.clone(), got: f.names.clone() });
        }
    }
    let p = names.len();
    let mf = m as f64;
    let mut out = RubinPooled {
        names,
        beta_mi: Vec::with_capacity(p),
        within_var: Vec::with_capacity(p),
        between_var: Vec::with_capacity(p),
        total_var: Vec::with_capacity(p),
        se: Vec::with_capacity(p),
        z: Vec::with_capacity(p),
        p: Vec::with_capacity(p),
        ci_low: Vec::with_capacity(p),
        ci_high: Vec::with_capacity(p),
        per_imputation_fits: fits.to_vec(),
    };
    for j in 0..p {
        let betas: Vec<f64> = fits.iter().map(|f| f.coef[j]).collect();
        let beta = mean(&betas);
        let v = mean(&fits.iter().map(|f| f.se[j] * f.se[j]).collect::<Vec<_>>());
        let b = sample_var(&betas);
        let t = v + (1.0 + 1.0 / mf) * b;
        let se = t.sqrt();
        let z = beta / se;
        out.beta_mi.push(beta);
        out.within_var.push(v);
        out.between_var.push(b);
        out.total_var.push(t);
        out.se.push(se);
        out.z.push(z);
        out.p.push(wald_p(z));
        out.ci_low.push(beta - Z_975 * se);
        out.ci_high.push(beta + Z_975 * se);
    }
    Ok(out)
}

/// Per-column missingness before imputation.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationRow {
    pub variable: String,
    pub missing: usize,
    pub missing_pct: f64,
    pub method: ImputeMethod,
}

/// One row per numeric column with at least one masked cell, in frame order.
pub fn imputation_report(frame: &PatientFrame, policies: &[ImputePolicy], fallback: ImputeMethod) -> Vec<ImputationRow> {
    let n = frame.n_rows().max(1) as f64;
    frame
        .columns()
        .iter()
        .filter(|c| c.is_numeric() && c.missing_count() > 0)
        .map(|c| ImputationRow {
            variable: c.name.clone(),
            missing: c.missing_count(),
            missing_pct: 100.0 * c.missing_count() as f64 / n,
            method: method_for(&c.name, policies, fallback),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn fit(names: &[&str], coef: &[f64], se: &[f64]) -> GlmFit {
        let k = coef.len();
        GlmFit {
            names: names.iter().map(|s| s.to_string()).collect(),
            coef: coef.to_vec(),
            se: se.to_vec(),
            z: vec![0.0; k],
            p: vec![1.0; k],
            ci_low: vec![0.0; k],
            ci_high: vec![0.0; k],
            loglik: -1.0,
            loglik_null: -1.0,
            pseudo_r2: 0.0,
            n: 10,
            converged: true,
            iterations: 1,
        }
    }

    fn frame(cols: Vec<Column>) -> PatientFrame {
        PatientFrame::new(cols).unwrap()
    }

    #[test]
    fn mean_and_median_fills() {
        let f = frame(vec![
            Column::numeric("HR", vec![1.0, f64::NAN, 3.0]),
            Column::numeric("SBP", vec![1.0, f64::NAN, 100.0]),
        ]);
        let out = impute_single(&f, &default_policies()[..0]).unwrap();
        assert_eq!(out.mask("HR").unwrap(), &[false, true, false]);

        let p = [ImputePolicy::new("HR", ImputeMethod::Mean), ImputePolicy::new("SBP", ImputeMethod::Median)];
        let out = impute_single(&f, &p).unwrap();
        assert_eq!(out.numeric("HR").unwrap(), &[1.0, 2.0, 3.0]);
        assert_eq!(out.numeric("SBP").unwrap()[1], 50.5);
        assert_eq!(out.column("SBP").unwrap().missing_count(), 0);
    }

    #[test]
    fn all_missing_column_is_an_error() {
        let f = frame(vec![Column::numeric("HR", vec![f64::NAN; 3])]);
        let p = [ImputePolicy::new("HR", ImputeMethod::Mean)];
        assert!(matches!(impute_single(&f, &p), Err(ImputeError::AllMissingColumn(c)) if c == "HR"));
    }

    #[test]
    fn policies_cover_aggregate_suffixes() {
        let p = default_policies();
        assert_eq!(method_for("HR_min", &p, ImputeMethod::None), ImputeMethod::Mean);
        assert_eq!(method_for("Lactate_max", &p, ImputeMethod::None), ImputeMethod::Mice);
        assert_eq!(method_for("WBC", &p, ImputeMethod::Mice), ImputeMethod::Mice);
        assert_eq!("median".parse::<ImputeMethod>().unwrap(), ImputeMethod::Median);
        assert!("knn".parse::<ImputeMethod>().is_err());
    }

    proptest! {
        #[test]
        fn single_imputation_keeps_observed_cells(vals in proptest::collection::vec(proptest::option::weighted(0.7, -50.0..50.0f64), 1..40)) {
            prop_assume!(vals.iter().any(Option::is_some));
            let f = frame(vec![Column::numeric_opt("x", vals.clone())]);
            for method in [ImputeMethod::Mean, ImputeMethod::Median, ImputeMethod::Zero] {
                let out = impute_single(&f, &[ImputePolicy::new("x", method)]).unwrap();
                let col = out.column("x").unwrap();
                prop_assert_eq!(col.missing_count(), 0);
                for (r, v) in vals.iter().enumerate() {
                    if let Some(v) = v {
                        prop_assert_eq!(col.get(r), Some(*v));
                    }
                }
            }
        }

        #[test]
        fn rubin_total_at_least_within(betas in proptest::collection::vec(-3.0..3.0f64, 2..8), se in 0.01..2.0f64) {
            let fits: Vec<GlmFit> = betas.iter().map(|&b| fit(&["const"], &[b], &[se])).collect();
            let pooled = rubin_pool(&fits, fits.len()).unwrap();
            prop_assert!(pooled.total_var[0] >= pooled.within_var[0]);
            prop_assert!(pooled.between_var[0] >= 0.0);
        }
    }

    #[test]
    fn rubin_two_imputation_hand_case() {
        let fits = [fit(&["x"], &[1.0], &[0.5]), fit(&["x"], &[3.0], &[0.5])];
        let p = rubin_pool(&fits, 2).unwrap();
        assert_eq!((p.beta_mi[0], p.within_var[0], p.between_var[0], p.total_var[0]), (2.0, 0.25, 2.0, 3.25));
    }

    #[test]
    fn rubin_identical_fits_have_no_between_variance() {
        let fits = vec![fit(&["const", "x"], &[0.3, 1.2], &[0.1, 0.2]); 5];
        let p = rubin_pool(&fits, 5).unwrap();
        assert_eq!(p.between_var, vec![0.0, 0.0]);
        assert_eq!(p.total_var, p.within_var);
    }

    #[test]
    fn rubin_rejects_layout_mismatch() {
        let fits = [fit(&["const"], &[1.0], &[0.1]), fit(&["const", "x"], &[1.0, 2.0], &[0.1, 0.1])];
        assert!(matches!(rubin_pool(&fits, 2), Err(ImputeError::LayoutMismatch { index: 1, .. })));
        assert!(matches!(rubin_pool(&fits[..1], 2), Err(ImputeError::FitCount { .. })));
    }

    #[test]
    fn complete_frame_gives_identical_copies() {
        let f = frame(vec![Column::numeric("a", vec![1.0, 2.0, 3.0]), Column::numeric("b", vec![2.0, 1.0, 0.0])]);
        let out = mice_impute(&f, &MiceConfig::default()).unwrap();
        assert_eq!(out.len(), 5);
        assert!(out.iter().all(|o| *o == f));
    }

    #[test]
    fn exact_linear_relation_is_recovered() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.5).collect();
        let mut y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        y[7] = f64::NAN;
        let f = frame(vec![Column::numeric("x", x.clone()), Column::numeric("y", y)]);
        for out in mice_impute(&f, &MiceConfig::default()).unwrap() {
            assert!((out.numeric("y").unwrap()[7] - 2.0 * x[7]).abs() < 1e-3);
        }
    }

    #[test]
    fn chains_are_seed_deterministic_and_preserve_observed_cells() {
        let mut rng = seed::rng(5);
        let n = 200;
        let a: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = a.iter().map(|v| if rng.random::<f64>() < 0.2 { f64::NAN } else { v + rng.random::<f64>() }).collect();
        let c: Vec<f64> = a.iter().map(|v| if rng.random::<f64>() < 0.1 { f64::NAN } else { v * 3.0 }).collect();
        let f = frame(vec![
            Column::numeric("subject_id", (0..n).map(|i| i as f64).collect()),
            Column::numeric("a", a),
            Column::numeric("b", b.clone()),
            Column::numeric("c", c),
        ]);
        let cfg = MiceConfig { m: 3, ..Default::default() };
        let first = mice_impute(&f, &cfg).unwrap();
        assert_eq!(first, mice_impute(&f, &cfg).unwrap());
        assert_ne!(first[0], first[1]);
        for out in &first {
            assert_eq!(out.column("b").unwrap().missing_count(), 0);
            for (r, v) in b.iter().enumerate() {
                if v.is_finite() {
                    assert_eq!(out.numeric("b").unwrap()[r], *v);
                }
            }
            assert_eq!(out.numeric("subject_id").unwrap(), f.numeric("subject_id").unwrap());
        }
    }

    #[test]
    fn invalid_configs_rejected() {
        let f = frame(vec![Column::numeric("a", vec![1.0]), Column::numeric("b", vec![1.0])]);
        assert!(mice_impute(&f, &MiceConfig { m: 1, ..Default::default() }).is_err());
        assert!(mice_impute(&f, &MiceConfig { max_iter: 0, ..Default::default() }).is_err());
        let single = frame(vec![Column::numeric("a", vec![1.0, f64::NAN])]);
        assert!(matches!(mice_impute(&single, &MiceConfig::default()), Err(ImputeError::InvalidConfig(_))));
    }

    #[test]
    fn report_lists_masked_columns() {
        let f = frame(vec![Column::numeric("HR", vec![1.0, f64::NAN]), Column::numeric("Na", vec![1.0, 2.0])]);
        let rows = imputation_report(&f, &default_policies(), ImputeMethod::Mice);
        assert_eq!(rows.len(), 1);
        assert_eq!((rows[0].missing, rows[0].missing_pct, rows[0].method), (1, 50.0, ImputeMethod::Mean));
    }
}
