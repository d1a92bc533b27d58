//! Cohort construction: diagnosis filter, first ICU stay per patient, adult
//! filter and in-hospital mortality label.

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

use crate::frame::{format_number, join, Column, FrameError, JoinKind, JoinSpec, PatientFrame, HADM_ID, STAY_ID, SUBJECT_ID};

pub const OUTCOME: &str = "in_hospital_death";
pub const INTIME: &str = "intime";
pub const DISCHTIME: &str = "dischtime";
pub const DEATHTIME: &str = "deathtime";

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("stay on row {0} has no intime")]
    MissingIntime(usize),
    #[error("admission on row {0} has no dischtime")]
    MissingDischtime(usize),
    #[error("invalid cohort config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortConfig {
    /// A code ending in `*` or starting with a letter matches by prefix;
    /// other codes must match exactly.
    pub icd_codes: Vec<String>,
    pub min_age: u32,
    pub code_column: String,
    pub age_column: String,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            icd_codes: ["4275", "I46", "I462", "I468", "I469"].iter().map(|s| s.to_string()).collect(),
            min_age: 18,
            code_column: "icd_code".into(),
            age_column: "anchor_age".into(),
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<(), CohortError> {
        if self.icd_codes.iter().all(|c| c.trim().trim_end_matches('*').is_empty()) {
            return Err(CohortError::InvalidConfig("icd_codes is empty".into()));
        }
        Ok(())
    }
}

/// True when `code` matches configured pattern `pattern`.
pub fn icd_matches(pattern: &str, code: &str) -> bool {
    let code = code.trim();
    let pattern = pattern.trim();
    if let Some(stem) = pattern.strip_suffix('*') {
        return code.starts_with(stem);
    }
    if pattern.starts_with(|c: char| c.is_ascii_alphabetic()) {
        code.starts_with(pattern)
    } else {
        code == pattern
    }
}

/// Cell text for `name`, rendering numeric columns without trailing `.0`.
fn text_cells(frame: &PatientFrame, name: &str) -> Result<Vec<Option<String>>, FrameError> {
    let col = frame.column(name)?;
    Ok((0..frame.n_rows())
        .map(|r| {
            if col.missing[r] {
                None
            } else if let Some(t) = col.as_text() {
                Some(t[r].clone())
            } else {
                col.get(r).map(format_number)
            }
        })
        .collect())
}

/// Rows whose code matches any configured pattern, deduplicated by hadm_id
/// keeping the first occurrence. An empty result is logged, not an error.
pub fn filter_by_diagnosis(diagnoses: &PatientFrame, cfg: &CohortConfig) -> Result<PatientFrame, CohortError> {
    cfg.validate()?;
    let codes = text_cells(diagnoses, &cfg.code_column)?;
    let hadm = diagnoses.column(HADM_ID).ok();
    let mut seen = HashSet::new();
    let out = diagnoses.filter_rows(|r| {
        let Some(code) = &codes[r] else { return false };
        if !cfg.icd_codes.iter().any(|p| icd_matches(p, code)) {
            return false;
        }
        match hadm.and_then(|c| c.get(r)) {
            Some(h) => seen.insert(h.to_bits()),
            None => true,
        }
    });
    if out.n_rows() == 0 {
        log::warn!("empty cohort: no diagnosis rows match {:?}", cfg.icd_codes);
    }
    Ok(out)
}

/// One stay per subject: earliest intime, ties to the smaller stay_id.
pub fn first_icu_stay(stays: &PatientFrame) -> Result<PatientFrame, CohortError> {
    let subject = stays.column(SUBJECT_ID)?;
    let intime = stays.column(INTIME)?;
    let stay = stays.column(STAY_ID).ok();
    let mut best: BTreeMap<i64, usize> = BTreeMap::new();
    for r in 0..stays.n_rows() {
        let t = intime.get(r).ok_or(CohortError::MissingIntime(r))?;
        let Some(s) = subject.get(r) else { continue };
        let sid = |row: usize| stay.and_then(|c| c.get(row)).unwrap_or(f64::INFINITY);
        best.entry(s as i64)
            .and_modify(|b| {
                let bt = intime.get(*b).unwrap_or(f64::INFINITY);
                if t < bt || (t == bt && sid(r) < sid(*b)) {
                    *b = r;
                }
            })
            .or_insert(r);
    }
    let rows: Vec<usize> = best.into_values().collect();
    Ok(stays.select_rows(&rows))
}

/// Adds `in_hospital_death`: 1 when deathtime is recorded and not after
/// dischtime. A frame without a deathtime column labels everyone 0.
pub fn label_mortality(admissions: &PatientFrame) -> Result<PatientFrame, CohortError> {
    let disch = admissions.column(DISCHTIME)?;
    let death = admissions.column(DEATHTIME).ok();
    let mut label = Vec::with_capacity(admissions.n_rows());
    for r in 0..admissions.n_rows() {
        let d = disch.get(r).ok_or(CohortError::MissingDischtime(r))?;
        let died = death.and_then(|c| c.get(r)).is_some_and(|t| t <= d);
        label.push(if died { 1.0 } else { 0.0 });
    }
    Ok(admissions.clone().with_column(Column::numeric(OUTCOME, label))?)
}

/// Keeps rows with age at least `min_age`; a masked age is ineligible.
pub fn apply_age_filter(frame: &PatientFrame, cfg: &CohortConfig) -> Result<PatientFrame, CohortError> {
    let age = frame.column(&cfg.age_column)?;
    if !age.is_numeric() {
        return Err(FrameError::NonNumericColumn(cfg.age_column.clone()).into());
    }
    let min = f64::from(cfg.min_age);
    Ok(frame.filter_rows(|r| age.get(r).is_some_and(|a| a >= min)))
}

/// Counts after each cohort step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CohortSummary {
    pub diagnosed_admissions: usize,
    pub linked_stays: usize,
    pub first_stays: usize,
    pub adults: usize,
    pub deaths: usize,
}

/// Runs the whole cohort definition. The result has one row per subject,
/// sorted by subject_id, with identifiers, stay times, age and the outcome.
pub fn build_cohort(
    diagnoses: &PatientFrame,
    patients: &PatientFrame,
    icustays: &PatientFrame,
    admissions: &PatientFrame,
    cfg: &CohortConfig,
) -> Result<(PatientFrame, CohortSummary), CohortError> {
    let mut summary = CohortSummary::default();
    let dx = filter_by_diagnosis(diagnoses, cfg)?;
    summary.diagnosed_admissions = dx.n_rows();
    let keys = dx.select_columns(&[SUBJECT_ID, HADM_ID])?;

    let stays = join(&keys, icustays, &JoinSpec::new(&[SUBJECT_ID, HADM_ID], JoinKind::Inner))?;
    summary.linked_stays = stays.n_rows();
    let first = first_icu_stay(&stays)?;
    summary.first_stays = first.n_rows();

    let mut adm_cols = vec![SUBJECT_ID, HADM_ID, DISCHTIME];
    if admissions.has_column(DEATHTIME) {
        adm_cols.push(DEATHTIME);
    }
    let adm = admissions.select_columns(&adm_cols)?;
    let with_adm = join(&first, &adm, &JoinSpec::new(&[SUBJECT_ID, HADM_ID], JoinKind::Inner))?;
    let labelled = label_mortality(&with_adm)?;

    let ages = patients.select_columns(&[SUBJECT_ID, &cfg.age_column])?;
    let with_age = join(&labelled, &ages, &JoinSpec::new(&[SUBJECT_ID], JoinKind::Left))?;
    let adults = apply_age_filter(&with_age, cfg)?.sort_by(SUBJECT_ID)?;
    summary.adults = adults.n_rows();
    summary.deaths = adults.numeric(OUTCOME)?.iter().filter(|&&v| v == 1.0).count();

    let mut keep: Vec<&str> = vec![SUBJECT_ID, HADM_ID, STAY_ID, INTIME, DISCHTIME];
    if adults.has_column(DEATHTIME) {
        keep.push(DEATHTIME);
    }
    keep.extend([cfg.age_column.as_str(), OUTCOME]);
    Ok((adults.select_columns(&keep)?, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn num(name: &str, v: &[f64]) -> Column {
        Column::numeric(name, v.to_vec())
    }

    fn text(name: &str, v: &[&str]) -> Column {
        Column::text(name, v.iter().map(|s| s.to_string()).collect())
    }

    #[test]
    fn code_matching_rules() {
        assert!(icd_matches("I46", "I462"));
        assert!(icd_matches("I46*", "I469"));
        assert!(icd_matches("4275", "4275"));
        assert!(!icd_matches("4275", "42751"));
        assert!(icd_matches("427*", "42751"));
        assert!(!icd_matches("I46", "E11"));
    }

    #[test]
    fn diagnosis_filter_keeps_matches_and_dedups() {
        let dx = PatientFrame::new(vec![
            num(HADM_ID, &[1.0, 2.0, 3.0, 2.0]),
            text("icd_code", &["4275", "I462", "E11", "I469"]),
        ])
        .unwrap();
        let cfg = CohortConfig { icd_codes: vec!["4275".into(), "I46*".into()], ..Default::default() };
        let out = filter_by_diagnosis(&dx, &cfg).unwrap();
        assert_eq!(out.numeric(HADM_ID).unwrap(), &[1.0, 2.0]);
        assert_eq!(out.text("icd_code").unwrap()[1], "I462");

        let none = CohortConfig { icd_codes: vec!["Z99".into()], ..Default::default() };
        assert_eq!(filter_by_diagnosis(&dx, &none).unwrap().n_rows(), 0);
        assert!(filter_by_diagnosis(&dx, &CohortConfig { icd_codes: vec![], ..Default::default() }).is_err());
    }

    #[test]
    fn first_stay_by_time_then_stay_id() {
        let stays = PatientFrame::new(vec![
            num(SUBJECT_ID, &[1.0, 1.0, 2.0, 2.0, 3.0]),
            num(STAY_ID, &[10.0, 11.0, 9.0, 4.0, 7.0]),
            num(INTIME, &[5.0, 2.0, 3.0, 3.0, 1.0]),
        ])
        .unwrap();
        let out = first_icu_stay(&stays).unwrap();
        assert_eq!(out.numeric(STAY_ID).unwrap(), &[11.0, 4.0, 7.0]);

        let bad = PatientFrame::new(vec![num(SUBJECT_ID, &[1.0]), num(INTIME, &[f64::NAN])]).unwrap();
        assert!(matches!(first_icu_stay(&bad), Err(CohortError::MissingIntime(0))));
    }

    #[test]
    fn mortality_label_cases() {
        let adm = PatientFrame::new(vec![num(DISCHTIME, &[12.0, 12.0, 10.0]), num(DEATHTIME, &[10.0, f64::NAN, 12.0])]).unwrap();
        assert_eq!(label_mortality(&adm).unwrap().numeric(OUTCOME).unwrap(), &[1.0, 0.0, 0.0]);
        let bad = PatientFrame::new(vec![num(DISCHTIME, &[f64::NAN])]).unwrap();
        assert!(matches!(label_mortality(&bad), Err(CohortError::MissingDischtime(0))));
    }

    #[test]
    fn age_filter_drops_minors_and_masked() {
        let f = PatientFrame::new(vec![num("anchor_age", &[17.0, 18.0, 90.0, f64::NAN])]).unwrap();
        let out = apply_age_filter(&f, &CohortConfig::default()).unwrap();
        assert_eq!(out.numeric("anchor_age").unwrap(), &[18.0, 90.0]);
    }

    fn tables() -> [PatientFrame; 4] {
        let dx = PatientFrame::new(vec![
            num(SUBJECT_ID, &[1.0, 1.0, 2.0, 3.0, 4.0, 5.0]),
            num(HADM_ID, &[100.0, 101.0, 200.0, 300.0, 400.0, 500.0]),
            text("icd_code", &["4275", "I469", "I460", "E119", "4275", "4275"]),
        ])
        .unwrap();
        let patients = PatientFrame::new(vec![
            num(SUBJECT_ID, &[1.0, 2.0, 3.0, 4.0, 5.0]),
            num("anchor_age", &[70.0, 55.0, 60.0, 16.0, 40.0]),
        ])
        .unwrap();
        let icu = PatientFrame::new(vec![
            num(SUBJECT_ID, &[1.0, 1.0, 2.0, 3.0, 4.0]),
            num(HADM_ID, &[100.0, 101.0, 200.0, 300.0, 400.0]),
            num(STAY_ID, &[1000.0, 1001.0, 2000.0, 3000.0, 4000.0]),
            num(INTIME, &[50.0, 10.0, 5.0, 5.0, 5.0]),
        ])
        .unwrap();
        let adm = PatientFrame::new(vec![
            num(SUBJECT_ID, &[1.0, 1.0, 2.0, 3.0, 4.0, 5.0]),
            num(HADM_ID, &[100.0, 101.0, 200.0, 300.0, 400.0, 500.0]),
            num(DISCHTIME, &[60.0, 20.0, 30.0, 30.0, 30.0, 30.0]),
            num(DEATHTIME, &[f64::NAN, 20.0, f64::NAN, f64::NAN, 25.0, f64::NAN]),
        ])
        .unwrap();
        [dx, patients, icu, adm]
    }

    #[test]
    fn end_to_end_cohort() {
        let [dx, p, icu, adm] = tables();
        let (cohort, summary) = build_cohort(&dx, &p, &icu, &adm, &CohortConfig::default()).unwrap();
        // subject 3 has no matching code, 4 is a minor, 5 has no ICU stay
        assert_eq!(cohort.numeric(SUBJECT_ID).unwrap(), &[1.0, 2.0]);
        assert_eq!(cohort.numeric(STAY_ID).unwrap(), &[1001.0, 2000.0]);
        assert_eq!(cohort.numeric(OUTCOME).unwrap(), &[1.0, 0.0]);
        assert_eq!(
            summary,
            CohortSummary { diagnosed_admissions: 5, linked_stays: 4, first_stays: 3, adults: 2, deaths: 1 }
        );
    }

    proptest! {
        #[test]
        fn cohort_is_order_insensitive(perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle(),
                                       perm_icu in Just((0..5usize).collect::<Vec<_>>()).prop_shuffle()) {
            let [dx, p, icu, adm] = tables();
            let base = build_cohort(&dx, &p, &icu, &adm, &CohortConfig::default()).unwrap().0;
            let shuffled = build_cohort(&dx.select_rows(&perm), &p, &icu.select_rows(&perm_icu), &adm.select_rows(&perm), &CohortConfig::default()).unwrap().0;
            prop_assert_eq!(base, shuffled);
        }
    }
}
