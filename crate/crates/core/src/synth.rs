//! Seeded synthetic cohort with known ground truth, rendered as MIMIC-shaped
//! tables so the full pipeline can run end to end without restricted data.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::DateTime;
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::{DEATHTIME, DISCHTIME, INTIME, OUTCOME};
use crate::eval::roc;
use crate::frame::{write_csv, Column, FrameError, PatientFrame, HADM_ID, STAY_ID, SUBJECT_ID};
use crate::harmonize::{
    fahrenheit_to_celsius, CHARTTIME, GCS_EYE, GCS_MOTOR, GCS_TOTAL, GCS_VERBAL, ITEMID, LABS, STARTTIME, VALUENUM,
    VALUEUOM, VITALS,
};
use crate::linalg::sigmoid;
use crate::seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no intercept reaches prevalence {0}")]
    InfeasiblePrevalence(f64),
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Latent distribution of one structured variable. Values are clamped to
/// `[lo, hi]`; effects act on `(value - mean) / sd`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nominal {
    pub name: &'static str,
    pub mean: f64,
    pub sd: f64,
    pub lo: f64,
    pub hi: f64,
}

const fn nom(name: &'static str, mean: f64, sd: f64, lo: f64, hi: f64) -> Nominal {
    Nominal { name, mean, sd, lo, hi }
}

/// Vitals and labs in panel order (`MBP` is derived from SBP/DBP).
pub const NOMINALS: [Nominal; 24] = [
    nom("HR", 90.0, 18.0, 30.0, 200.0),
    nom("SBP", 115.0, 18.0, 60.0, 220.0),
    nom("DBP", 60.0, 10.0, 30.0, 120.0),
    nom("MBP", 78.3, 10.0, 40.0, 150.0),
    nom("RR", 20.0, 4.5, 6.0, 50.0),
    nom("BT", 98.2, 1.3, 90.0, 106.0),
    nom("SpO2", 96.0, 2.5, 75.0, 100.0),
    nom("Hematocrit", 32.0, 6.0, 15.0, 60.0),
    nom("Hemoglobin", 10.7, 2.0, 5.0, 20.0),
    nom("Platelet", 200.0, 80.0, 10.0, 800.0),
    nom("WBC", 13.0, 5.0, 1.5, 45.0),
    nom("PT", 15.0, 4.0, 9.0, 60.0),
    nom("INR", 1.4, 0.37, 0.8, 6.0),
    nom("Creatinine", 1.6, 1.0, 0.2, 12.0),
    nom("BUN", 30.0, 18.0, 3.0, 200.0),
    nom("Glucose", 170.0, 60.0, 40.0, 590.0),
    nom("Potassium", 4.3, 0.6, 2.5, 7.5),
    nom("Sodium", 139.0, 5.0, 115.0, 165.0),
    nom("Calcium", 8.4, 0.7, 5.0, 12.0),
    nom("Chloride", 104.0, 6.0, 80.0, 130.0),
    nom("AnionGap", 16.0, 4.0, 4.0, 40.0),
    nom("Bicarbonate", 21.0, 4.5, 5.0, 45.0),
    nom("Lactate", 3.5, 2.5, 0.3, 19.0),
    nom("pH", 7.30, 0.1, 6.8, 7.7),
];
pub const AGE: Nominal = nom("anchor_age", 65.0, 15.0, 18.0, 91.0);
pub const GCS: Nominal = nom(GCS_TOTAL, 9.5, 3.5, 3.0, 15.0);

pub fn nominal(name: &str) -> Option<Nominal> {
    NOMINALS.iter().chain([&AGE, &GCS]).find(|n| n.name == name).copied()
}

/// Correlation of the collinear partner with its anchor.
const PT_INR_CORR: f64 = 0.99;
const HCT_HB_CORR: f64 = 0.97;
/// Standard deviation (mmHg) of MBP around `(SBP + 2 DBP) / 3`.
const MBP_NOISE: f64 = 2.0;

const CA_CODES: [&str; 5] = ["4275", "I469", "I462", "I468", "I460"];
const FLAG_CODES: [(&str, [&str; 2]); 5] = [
    ("hypertension", ["4019", "I10"]),
    ("heart_failure", ["4280", "I509"]),
    ("myocardial_infarction", ["41071", "I214"]),
    ("diabetes", ["25000", "E119"]),
    ("copd", ["4928", "J449"]),
];
const TREATMENT_ITEMS: [(&str, i64); 3] = [("received_ventilation", 225792), ("epinephrine", 221289), ("dopamine", 221662)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoteCoverageRates {
    pub discharge: f64,
    pub radiology: f64,
}

impl Default for NoteCoverageRates {
    fn default() -> Self {
        Self { discharge: 0.701, radiology: 0.710 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Patients in the analysis cohort (adult, qualifying diagnosis, first
    /// stay). Extra excluded patients are added on top.
    pub n_patients: usize,
    pub prevalence_target: f64,
    /// Log-odds per standard deviation of each structured variable.
    pub true_beta: BTreeMap<String, f64>,
    /// Log-odds per unit of the note latent factor.
    pub text_signal_strength: f64,
    /// MCAR fraction per variable; `GCS_Total` masks the whole GCS block.
    pub missing_rates: BTreeMap<String, f64>,
    pub note_coverage: NoteCoverageRates,
    pub embedding_dim: usize,
    pub flag_rates: BTreeMap<String, f64>,
    pub readmission_rate: f64,
    pub minor_rate: f64,
    pub non_qualifying_rate: f64,
    pub implausible_rate: f64,
    pub celsius_rate: f64,
    pub seed: u64,
}

fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|&(k, v)| (k.to_string(), v)).collect()
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_patients: 2307,
            prevalence_target: 0.52,
            true_beta: default_beta(),
            text_signal_strength: 2.0,
            missing_rates: map(&[
                ("HR", 0.0026),
                ("SBP", 0.0152),
                ("DBP", 0.0165),
                ("MBP", 0.0165),
                ("RR", 0.0061),
                ("BT", 0.1331),
                ("SpO2", 0.0156),
                ("Hematocrit", 0.0459),
                ("Hemoglobin", 0.0485),
                ("Platelet", 0.0507),
                ("WBC", 0.0542),
                ("PT", 0.1092),
                ("INR", 0.1079),
                ("Creatinine", 0.0442),
                ("BUN", 0.0464),
                ("Glucose", 0.0477),
                ("Potassium", 0.0451),
                ("Sodium", 0.0420),
                ("Calcium", 0.0681),
                ("Chloride", 0.0429),
                ("AnionGap", 0.0442),
                ("Bicarbonate", 0.0438),
                ("Lactate", 0.1916),
                ("pH", 0.1760),
                (GCS_TOTAL, 0.02),
            ]),
            note_coverage: NoteCoverageRates::default(),
            embedding_dim: 768,
            flag_rates: map(&[
                ("hypertension", 0.45),
                ("heart_failure", 0.30),
                ("myocardial_infarction", 0.20),
                ("diabetes", 0.30),
                ("copd", 0.10),
                ("received_ventilation", 0.597),
                ("epinephrine", 0.026),
                ("dopamine", 0.021),
            ]),
            readmission_rate: 0.2,
            minor_rate: 0.02,
            non_qualifying_rate: 0.05,
            implausible_rate: 0.01,
            celsius_rate: 0.3,
            seed: 42,
        }
    }
}

/// Eight structured effects with the directions reported for the real
/// cohort: lactate, heart rate, age, BUN and PT raise risk; GCS, SpO2 and
/// temperature lower it.
pub fn default_beta() -> BTreeMap<String, f64> {
    map(&[
        ("Lactate", 0.8),
        ("HR", 0.5),
        ("anchor_age", 0.4),
        (GCS_TOTAL, -0.6),
        ("SpO2", -0.4),
        ("BT", -0.4),
        ("BUN", 0.3),
        ("PT", 0.3),
    ])
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_patients < 10 {
            return bad(format!("n_patients must be at least 10, got {}", self.n_patients));
        }
        if self.embedding_dim < 2 {
            return bad("embedding_dim must be at least 2".into());
        }
        let unit = |name: &str, v: f64| (0.0..=1.0).contains(&v).then_some(()).ok_or(format!("{name} = {v} outside [0, 1]"));
        let mut checks = vec![
            unit("note_coverage.discharge", self.note_coverage.discharge),
            unit("note_coverage.radiology", self.note_coverage.radiology),
            unit("readmission_rate", self.readmission_rate),
            unit("minor_rate", self.minor_rate),
            unit("non_qualifying_rate", self.non_qualifying_rate),
            unit("implausible_rate", self.implausible_rate),
            unit("celsius_rate", self.celsius_rate),
        ];
        checks.extend(self.missing_rates.iter().map(|(k, &v)| unit(&format!("missing_rates.{k}"), v)));
        checks.extend(self.flag_rates.iter().map(|(k, &v)| unit(&format!("flag_rates.{k}"), v)));
        for c in checks {
            if let Err(m) = c {
                return bad(m);
            }
        }
        for (k, v) in &self.true_beta {
            if nominal(k).is_none() {
                return bad(format!("true_beta.{k}: unknown variable"));
            }
            if !v.is_finite() {
                return bad(format!("true_beta.{k} is not finite"));
            }
        }
        for k in self.missing_rates.keys() {
            if nominal(k).is_none() {
                return bad(format!("missing_rates.{k}: unknown variable"));
            }
        }
        if !self.text_signal_strength.is_finite() {
            return bad("text_signal_strength is not finite".into());
        }
        if !(self.prevalence_target > 0.0 && self.prevalence_target < 1.0) {
            return Err(SynthError::InfeasiblePrevalence(self.prevalence_target));
        }
        Ok(())
    }

    fn missing_rate(&self, name: &str) -> f64 {
        self.missing_rates.get(name).copied().unwrap_or(0.0)
    }

    fn flag_rate(&self, name: &str) -> f64 {
        self.flag_rates.get(name).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub intercept: f64,
    /// `(variable, log-odds per nominal sd)`.
    pub beta: Vec<(String, f64)>,
    pub text_signal_strength: f64,
    pub prevalence_target: f64,
    pub prevalence: f64,
    /// AUC of the true linear predictor on the analysis cohort.
    pub bayes_auc: f64,
}

impl GroundTruth {
    pub fn informative(&self) -> Vec<&str> {
        self.beta.iter().filter(|(_, b)| *b != 0.0).map(|(n, _)| n.as_str()).collect()
    }

    /// Long `name,role,value` layout.
    pub fn to_frame(&self) -> PatientFrame {
        let mut names = vec!["intercept".to_string()];
        let mut roles = vec!["intercept".to_string()];
        let mut values = vec![self.intercept];
        for (n, b) in &self.beta {
            let nm = nominal(n).expect("validated");
            for (role, v) in [("beta", *b), ("nominal_mean", nm.mean), ("nominal_sd", nm.sd)] {
                names.push(n.clone());
                roles.push(role.into());
                values.push(v);
            }
        }
        for (n, v) in [
            ("text_signal_strength", self.text_signal_strength),
            ("prevalence_target", self.prevalence_target),
            ("prevalence", self.prevalence),
            ("bayes_auc", self.bayes_auc),
        ] {
            names.push(n.into());
            roles.push("metric".into());
            values.push(v);
        }
        PatientFrame::new(vec![
            Column::text("name", names),
            Column::text("role", roles),
            Column::numeric("value", values),
        ])
        .expect("equal lengths")
    }
}

/// Per-patient latent state of the analysis cohort.
struct Latent {
    values: Vec<Vec<f64>>, // NOMINALS order
    age: Vec<f64>,
    gcs: Vec<[f64; 3]>,
    flags: Vec<Vec<bool>>, // flag_names order
    text: Vec<f64>,
    eta: Vec<f64>,
    y: Vec<f64>,
    intercept: f64,
}

fn flag_names() -> Vec<&'static str> {
    FLAG_CODES.iter().map(|f| f.0).chain(TREATMENT_ITEMS.iter().map(|t| t.0)).collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn clamp(n: &Nominal, v: f64) -> f64 {
    v.clamp(n.lo, n.hi)
}

fn standardized(n: &Nominal, v: f64) -> f64 {
    (v - n.mean) / n.sd
}

fn solve_intercept(eta: &[f64], target: f64) -> Result<f64, SynthError> {
    let prevalence = |b: f64| eta.iter().map(|e| sigmoid(b + e)).sum::<f64>() / eta.len() as f64;
    let (mut lo, mut hi) = (-30.0, 30.0);
    if prevalence(lo) > target || prevalence(hi) < target {
        return Err(SynthError::InfeasiblePrevalence(target));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if prevalence(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn draw_latent(cfg: &SynthConfig) -> Result<Latent, SynthError> {
    let n = cfg.n_patients;
    let mut rng = seed::rng(seed::derive(cfg.seed, "synth.latent"));
    let idx = |name: &str| NOMINALS.iter().position(|v| v.name == name).expect("known variable");
    let (pt, inr, hct, hb, sbp, dbp, mbp) = (idx("PT"), idx("INR"), idx("Hematocrit"), idx("Hemoglobin"), idx("SBP"), idx("DBP"), idx("MBP"));
    let names = flag_names();
    let mut lat = Latent {
        values: Vec::with_capacity(n),
        age: Vec::with_capacity(n),
        gcs: Vec::with_capacity(n),
        flags: Vec::with_capacity(n),
        text: Vec::with_capacity(n),
        eta: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        intercept: 0.0,
    };
    for _ in 0..n {
        let z: Vec<f64> = (0..NOMINALS.len()).map(|_| normal(&mut rng)).collect();
        let mut vals: Vec<f64> = NOMINALS.iter().zip(&z).map(|(nm, z)| clamp(nm, nm.mean + nm.sd * z)).collect();
        let partner = |anchor: f64, own: f64, r: f64| r * anchor + (1.0 - r * r).sqrt() * own;
        vals[inr] = clamp(&NOMINALS[inr], NOMINALS[inr].mean + NOMINALS[inr].sd * partner(z[pt], z[inr], PT_INR_CORR));
        vals[hb] = clamp(&NOMINALS[hb], NOMINALS[hb].mean + NOMINALS[hb].sd * partner(z[hct], z[hb], HCT_HB_CORR));
        vals[mbp] = clamp(&NOMINALS[mbp], (vals[sbp] + 2.0 * vals[dbp]) / 3.0 + MBP_NOISE * z[mbp]);

        let age = clamp(&AGE, (AGE.mean + AGE.sd * normal(&mut rng)).round());
        let total = clamp(&GCS, GCS.mean + GCS.sd * normal(&mut rng));
        let q = (total - 3.0) / 12.0;
        let gcs = [1.0 + 3.0 * q, 1.0 + 4.0 * q, 1.0 + 5.0 * q];
        let flags = names.iter().map(|f| rng.random::<f64>() < cfg.flag_rate(f)).collect();
        let t = normal(&mut rng);

        let mut eta = cfg.text_signal_strength * t;
        for (name, b) in &cfg.true_beta {
            let v = match name.as_str() {
                "anchor_age" => age,
                GCS_TOTAL => total,
                other => vals[idx(other)],
            };
            eta += b * standardized(&nominal(name).expect("validated"), v);
        }
        lat.values.push(vals);
        lat.age.push(age);
        lat.gcs.push(gcs);
        lat.flags.push(flags);
        lat.text.push(t);
        lat.eta.push(eta);
    }
    lat.intercept = solve_intercept(&lat.eta, cfg.prevalence_target)?;
    for e in &mut lat.eta {
        *e += lat.intercept;
    }
    let mut outcome_rng = seed::rng(seed::derive(cfg.seed, "synth.outcome"));
    lat.y = lat.eta.iter().map(|&e| if outcome_rng.random::<f64>() < sigmoid(e) { 1.0 } else { 0.0 }).collect();
    Ok(lat)
}

/// MCAR masks: `mask[name][i]` true when variable `name` is unobserved for
/// patient `i`.
fn draw_masks(cfg: &SynthConfig, n: usize) -> BTreeMap<String, Vec<bool>> {
    let mut rng = seed::rng(seed::derive(cfg.seed, "synth.mask"));
    let mut names: Vec<&str> = NOMINALS.iter().map(|v| v.name).collect();
    names.extend([AGE.name, GCS_TOTAL]);
    names
        .into_iter()
        .map(|name| {
            let rate = cfg.missing_rate(name);
            (name.to_string(), (0..n).map(|_| rng.random::<f64>() < rate).collect())
        })
        .collect()
}

fn ground_truth(cfg: &SynthConfig, lat: &Latent) -> GroundTruth {
    let prevalence = lat.y.iter().sum::<f64>() / lat.y.len() as f64;
    let bayes_auc = roc(&lat.eta, &lat.y).map_or(f64::NAN, |c| c.auc);
    GroundTruth {
        intercept: lat.intercept,
        beta: cfg.true_beta.iter().map(|(k, &v)| (k.clone(), v)).collect(),
        text_signal_strength: cfg.text_signal_strength,
        prevalence_target: cfg.prevalence_target,
        prevalence,
        bayes_auc,
    }
}

fn subject_id(i: usize) -> f64 {
    (10_000 + i) as f64
}

fn hadm_id(i: usize, readmission: bool) -> f64 {
    (20_000_000 + 2 * i + usize::from(readmission)) as f64
}

fn stay_id(i: usize, readmission: bool) -> f64 {
    (30_000_000 + 2 * i + usize::from(readmission)) as f64
}

/// Patient-level view of the analysis cohort: identifiers, age, outcome,
/// the latent per-stay value of every vital and lab, GCS components and
/// total, flags and the note latent factor. MCAR masks are applied.
pub fn generate_patient_level(cfg: &SynthConfig) -> Result<(PatientFrame, GroundTruth), SynthError> {
    cfg.validate()?;
    let lat = draw_latent(cfg)?;
    let n = cfg.n_patients;
    let masks = draw_masks(cfg, n);
    let masked = |name: &str, vals: Vec<f64>| {
        let m = &masks[name];
        Column::numeric(name, vals.into_iter().zip(m).map(|(v, &miss)| if miss { f64::NAN } else { v }).collect())
    };
    let mut cols = vec![
        Column::numeric(SUBJECT_ID, (0..n).map(subject_id).collect()),
        Column::numeric(HADM_ID, (0..n).map(|i| hadm_id(i, false)).collect()),
        Column::numeric(STAY_ID, (0..n).map(|i| stay_id(i, false)).collect()),
        masked(AGE.name, lat.age.clone()),
        Column::numeric(OUTCOME, lat.y.clone()),
    ];
    for (j, nm) in NOMINALS.iter().enumerate() {
        cols.push(masked(nm.name, lat.values.iter().map(|v| v[j]).collect()));
    }
    for (k, name) in [GCS_EYE, GCS_VERBAL, GCS_MOTOR].into_iter().enumerate() {
        let vals = lat.gcs.iter().zip(&masks[GCS_TOTAL]).map(|(g, &m)| if m { f64::NAN } else { g[k] }).collect();
        cols.push(Column::numeric(name, vals));
    }
    cols.push(masked(GCS_TOTAL, lat.gcs.iter().map(|g| g.iter().sum()).collect()));
    for (f, name) in flag_names().into_iter().enumerate() {
        cols.push(Column::numeric(name, lat.flags.iter().map(|fl| if fl[f] { 1.0 } else { 0.0 }).collect()));
    }
    cols.push(Column::numeric("text_latent", lat.text.clone()));
    Ok((PatientFrame::new(cols)?, ground_truth(cfg, &lat)))
}

// ---- table rendering -------------------------------------------------------

const BASE_HOURS: i64 = 1_577_880; // 2150-01-01

fn timestamp(minutes: i64) -> String {
    DateTime::from_timestamp(minutes * 60, 0).expect("in range").format("%Y-%m-%d %H:%M:%S").to_string()
}

#[derive(Default)]
struct Events {
    subject: Vec<f64>,
    hadm: Vec<f64>,
    stay: Vec<f64>,
    time: Vec<String>,
    item: Vec<f64>,
    value: Vec<f64>,
    uom: Vec<String>,
}

impl Events {
    fn push(&mut self, subject: f64, hadm: f64, stay: f64, minute: i64, item: i64, value: f64, uom: &str) {
        self.subject.push(subject);
        self.hadm.push(hadm);
        self.stay.push(stay);
        self.time.push(timestamp(minute));
        self.item.push(item as f64);
        self.value.push(value);
        self.uom.push(uom.to_string());
    }

    fn chart_frame(self, time_col: &str) -> PatientFrame {
        PatientFrame::new(vec![
            Column::numeric(SUBJECT_ID, self.subject),
            Column::numeric(HADM_ID, self.hadm),
            Column::numeric(STAY_ID, self.stay),
            Column::text(time_col, self.time),
            Column::numeric(ITEMID, self.item),
            Column::numeric(VALUENUM, self.value),
            Column::text(VALUEUOM, self.uom),
        ])
        .expect("equal lengths")
    }

    fn lab_frame(self) -> PatientFrame {
        PatientFrame::new(vec![
            Column::numeric(SUBJECT_ID, self.subject),
            Column::numeric(HADM_ID, self.hadm),
            Column::text(CHARTTIME, self.time),
            Column::numeric(ITEMID, self.item),
            Column::numeric(VALUENUM, self.value),
            Column::text(VALUEUOM, self.uom),
        ])
        .expect("equal lengths")
    }

    fn treatment_frame(self) -> PatientFrame {
        PatientFrame::new(vec![
            Column::numeric(SUBJECT_ID, self.subject),
            Column::numeric(HADM_ID, self.hadm),
            Column::numeric(STAY_ID, self.stay),
            Column::text(STARTTIME, self.time),
            Column::numeric(ITEMID, self.item),
        ])
        .expect("equal lengths")
    }
}

/// Item id and unit label per vital / lab variable.
fn vital_items(name: &str) -> &'static [i64] {
    match name {
        "HR" => &[220045],
        "SBP" => &[220179, 220050],
        "DBP" => &[220180, 220051],
        "MBP" => &[220181, 220052],
        "RR" => &[220210],
        "BT" => &[223761],
        "SpO2" => &[220277],
        _ => &[],
    }
}

fn lab_item(name: &str) -> i64 {
    const IDS: [i64; 17] =
        [51221, 51222, 51265, 51301, 51274, 51237, 50912, 51006, 50931, 50971, 50983, 50893, 50902, 50868, 50882, 50813, 50820];
    IDS[LABS.iter().position(|l| *l == name).expect("lab")]
}

/// `k` readings whose mean is exactly `value` (before clamping).
fn readings(rng: &mut ChaCha8Rng, value: f64, spread: f64, k: usize, nm: &Nominal) -> Vec<f64> {
    let noise: Vec<f64> = (0..k).map(|_| normal(rng) * spread).collect();
    let m = noise.iter().sum::<f64>() / k as f64;
    noise.iter().map(|e| (value + e - m).clamp(nm.lo.min(value), nm.hi.max(value))).collect()
}

fn within_window(rng: &mut ChaCha8Rng, intime_min: i64) -> i64 {
    intime_min + rng.random_range(0..24 * 60)
}

/// Pseudo-vocabulary of two-syllable letter-only words.
pub fn pseudo_vocabulary(size: usize) -> Vec<String> {
    const C: &[u8] = b"bcdfghjklmnprstvwz";
    const V: &[u8] = b"aeiou";
    let syllable = |s: usize| format!("{}{}", C[s / V.len()] as char, V[s % V.len()] as char);
    let n_syl = C.len() * V.len();
    (0..size)
        .map(|i| {
            let k = (i * 37 + 11) % (n_syl * n_syl);
            format!("{}{}", syllable(k / n_syl), syllable(k % n_syl))
        })
        .collect()
}

const VOCAB_SIZE: usize = 150;
const SIGNAL_WORDS: usize = 10;
const WORD_SIGNAL: f64 = 0.8;
const FILLER: [&str; 10] = ["the", "and", "of", "with", "was", "is", "no", "not", "patient", "___"];

fn pseudo_note(rng: &mut ChaCha8Rng, vocab: &[String], t: f64, offset: usize) -> String {
    let weights: Vec<f64> = (0..vocab.len())
        .map(|k| {
            let base = 1.0 / (k as f64 + 5.0);
            let shifted = (k + vocab.len() - offset) % vocab.len();
            if shifted < SIGNAL_WORDS {
                base * (WORD_SIGNAL * t).exp() * 4.0
            } else if shifted < 2 * SIGNAL_WORDS {
                base * (-WORD_SIGNAL * t).exp() * 4.0
            } else {
                base
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    let len = rng.random_range(40..120);
    let mut words = Vec::with_capacity(len);
    for _ in 0..len {
        let u: f64 = rng.random();
        if u < 0.15 {
            words.push(FILLER[rng.random_range(0..FILLER.len())].to_string());
            continue;
        }
        if u < 0.18 {
            words.push(format!("{}mg,", rng.random_range(1..500)));
            continue;
        }
        let mut r = rng.random::<f64>() * total;
        let mut k = 0;
        while k + 1 < weights.len() && r >= weights[k] {
            r -= weights[k];
            k += 1;
        }
        let w = &vocab[k];
        words.push(if rng.random::<f64>() < 0.1 { format!("{}.", w.to_uppercase()) } else { w.clone() });
    }
    words.join(" ")
}

/// All generated tables keyed by file name, plus the ground truth.
pub struct SynthOutput {
    pub tables: Vec<(&'static str, PatientFrame)>,
    pub truth: GroundTruth,
}

impl SynthOutput {
    pub fn table(&self, name: &str) -> Option<&PatientFrame> {
        self.tables.iter().find(|(n, _)| *n == name).map(|(_, f)| f)
    }

    /// Writes every table plus `ground_truth.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir).map_err(FrameError::from)?;
        for (name, frame) in &self.tables {
            write_csv(frame, dir.join(name))?;
        }
        write_csv(&self.truth.to_frame(), dir.join("ground_truth.csv"))?;
        Ok(())
    }
}

struct Person {
    subject: f64,
    hadm: f64,
    stay: f64,
    intime_min: i64,
}

/// Generates the full raw table set. The analysis cohort is exactly the
/// patient-level cohort of [`generate_patient_level`] with the same seed;
/// readmissions, minors and non-qualifying admissions are added around it.
pub fn generate(cfg: &SynthConfig) -> Result<SynthOutput, SynthError> {
    cfg.validate()?;
    let lat = draw_latent(cfg)?;
    let n = cfg.n_patients;
    let masks = draw_masks(cfg, n);
    let mut rng = seed::rng(seed::derive(cfg.seed, "synth.events"));

    let n_minor = (n as f64 * cfg.minor_rate).round() as usize;
    let n_other = (n as f64 * cfg.non_qualifying_rate).round() as usize;
    let total = n + n_minor + n_other;

    let mut patients = (Vec::new(), Vec::new());
    let mut stays: [Vec<f64>; 3] = Default::default();
    let mut stay_times: (Vec<String>, Vec<String>) = Default::default();
    let mut adm: [Vec<f64>; 2] = Default::default();
    let mut adm_times: (Vec<String>, Vec<String>, Vec<String>) = Default::default();
    let mut dx: (Vec<f64>, Vec<f64>, Vec<String>, Vec<f64>) = Default::default();
    let mut chart = Events::default();
    let mut labs = Events::default();
    let mut procs = Events::default();
    let mut inputs = Events::default();
    let names = flag_names();

    let mut add_stay = |p: &Person, los_h: i64, death_min: Option<i64>, rng: &mut ChaCha8Rng| {
        stays[0].push(p.subject);
        stays[1].push(p.hadm);
        stays[2].push(p.stay);
        stay_times.0.push(timestamp(p.intime_min));
        stay_times.1.push(timestamp(p.intime_min + los_h * 60 / 2));
        adm[0].push(p.subject);
        adm[1].push(p.hadm);
        let admit = p.intime_min - rng.random_range(0..12 * 60);
        let disch = p.intime_min + los_h * 60;
        adm_times.0.push(timestamp(admit));
        adm_times.1.push(timestamp(disch));
        adm_times.2.push(death_min.map_or_else(String::new, |d| timestamp(disch + d)));
    };
    let mut add_dx = |subject: f64, hadm: f64, code: &str| {
        dx.0.push(subject);
        dx.1.push(hadm);
        dx.3.push(if code.starts_with(|c: char| c.is_ascii_digit()) { 9.0 } else { 10.0 });
        dx.2.push(code.to_string());
    };

    for i in 0..total {
        let analysis = i < n;
        let minor = !analysis && i < n + n_minor;
        let p = Person {
            subject: subject_id(i),
            hadm: hadm_id(i, false),
            stay: stay_id(i, false),
            intime_min: (BASE_HOURS + 500 * i as i64) * 60 + rng.random_range(0..600),
        };
        let age = if analysis {
            lat.age[i]
        } else if minor {
            rng.random_range(16..18) as f64
        } else {
            clamp(&AGE, (AGE.mean + AGE.sd * normal(&mut rng)).round())
        };
        patients.0.push(p.subject);
        patients.1.push(age);

        let y = if analysis { lat.y[i] } else { f64::from(u8::from(rng.random::<f64>() < 0.5)) };
        let death = if y == 1.0 {
            Some(-rng.random_range(0..6 * 60))
        } else if rng.random::<f64>() < 0.03 {
            Some(rng.random_range(24 * 60..200 * 60))
        } else {
            None
        };
        add_stay(&p, rng.random_range(48..400), death, &mut rng);

        if analysis || minor {
            let code = CA_CODES[rng.random_range(0..CA_CODES.len())];
            add_dx(p.subject, p.hadm, code);
            if rng.random::<f64>() < 0.1 {
                add_dx(p.subject, p.hadm, "I469");
            }
        } else {
            add_dx(p.subject, p.hadm, "E119");
        }

        if analysis {
            for (f, (flag, codes)) in FLAG_CODES.iter().enumerate() {
                debug_assert_eq!(names[f], *flag);
                if lat.flags[i][f] {
                    add_dx(p.subject, p.hadm, codes[rng.random_range(0..2)]);
                }
            }
            for (k, (_, item)) in TREATMENT_ITEMS.iter().enumerate() {
                let events = if *item == 225792 { &mut procs } else { &mut inputs };
                if lat.flags[i][FLAG_CODES.len() + k] {
                    let t = within_window(&mut rng, p.intime_min);
                    events.push(p.subject, p.hadm, p.stay, t, *item, f64::NAN, "");
                } else if rng.random::<f64>() < 0.05 {
                    // started only after the first day
                    let t = p.intime_min + rng.random_range(25 * 60..72 * 60);
                    events.push(p.subject, p.hadm, p.stay, t, *item, f64::NAN, "");
                }
            }
            render_measurements(cfg, &lat, &masks, i, &p, &mut rng, &mut chart, &mut labs);
        } else {
            for _ in 0..3 {
                let t = within_window(&mut rng, p.intime_min);
                chart.push(p.subject, p.hadm, p.stay, t, 220045, 60.0 + 60.0 * rng.random::<f64>(), "bpm");
            }
        }

        if analysis && rng.random::<f64>() < cfg.readmission_rate {
            let re = Person {
                subject: p.subject,
                hadm: hadm_id(i, true),
                stay: stay_id(i, true),
                intime_min: p.intime_min + rng.random_range(200 * 60..450 * 60),
            };
            add_stay(&re, rng.random_range(48..200), None, &mut rng);
            add_dx(re.subject, re.hadm, "I469");
            for _ in 0..3 {
                let t = within_window(&mut rng, re.intime_min);
                chart.push(re.subject, re.hadm, re.stay, t, 220045, 150.0 + 30.0 * rng.random::<f64>(), "bpm");
            }
        }
    }

    let (discharge, radiology, discharge_emb, radiology_emb) = render_notes(cfg, &lat);
    let tables = vec![
        (
            "patients.csv",
            PatientFrame::new(vec![Column::numeric(SUBJECT_ID, patients.0), Column::numeric("anchor_age", patients.1)])?,
        ),
        (
            "icustays.csv",
            PatientFrame::new(vec![
                Column::numeric(SUBJECT_ID, stays[0].clone()),
                Column::numeric(HADM_ID, stays[1].clone()),
                Column::numeric(STAY_ID, stays[2].clone()),
                Column::text(INTIME, stay_times.0),
                Column::text("outtime", stay_times.1),
            ])?,
        ),
        (
            "admissions.csv",
            PatientFrame::new(vec![
                Column::numeric(SUBJECT_ID, adm[0].clone()),
                Column::numeric(HADM_ID, adm[1].clone()),
                Column::text("admittime", adm_times.0),
                Column::text(DISCHTIME, adm_times.1),
                Column::text(DEATHTIME, adm_times.2),
            ])?,
        ),
        (
            "diagnoses_icd.csv",
            PatientFrame::new(vec![
                Column::numeric(SUBJECT_ID, dx.0),
                Column::numeric(HADM_ID, dx.1),
                Column::text("icd_code", dx.2),
                Column::numeric("icd_version", dx.3),
            ])?,
        ),
        ("chartevents.csv", chart.chart_frame(CHARTTIME)),
        ("labevents.csv", labs.lab_frame()),
        ("procedureevents.csv", procs.treatment_frame()),
        ("inputevents.csv", inputs.treatment_frame()),
        ("discharge.csv", discharge),
        ("radiology.csv", radiology),
        ("discharge_emb.csv", discharge_emb),
        ("radiology_emb.csv", radiology_emb),
    ];
    Ok(SynthOutput { tables, truth: ground_truth(cfg, &lat) })
}

#[allow(clippy::too_many_arguments)]
fn render_measurements(
    cfg: &SynthConfig,
    lat: &Latent,
    masks: &BTreeMap<String, Vec<bool>>,
    i: usize,
    p: &Person,
    rng: &mut ChaCha8Rng,
    chart: &mut Events,
    labs: &mut Events,
) {
    let celsius = rng.random::<f64>() < cfg.celsius_rate;
    for (j, nm) in NOMINALS.iter().enumerate() {
        if masks[nm.name][i] {
            continue;
        }
        let value = lat.values[i][j];
        let vital = VITALS.contains(&nm.name);
        let k = if vital { rng.random_range(4..9) } else { rng.random_range(1..4) };
        let spread = if vital { 0.1 * nm.sd } else { 0.05 * nm.sd };
        for v in readings(rng, value, spread, k, nm) {
            let t = within_window(rng, p.intime_min);
            if vital {
                let items = vital_items(nm.name);
                match nm.name {
                    "BT" if celsius => chart.push(p.subject, p.hadm, p.stay, t, 223762, fahrenheit_to_celsius(v), "°C"),
                    "BT" => chart.push(p.subject, p.hadm, p.stay, t, items[0], v, "°F"),
                    "SBP" | "DBP" | "MBP" if rng.random::<f64>() < 0.2 => {
                        // arterial and cuff readings at the same time, pooled by averaging
                        let d = rng.random::<f64>() * 4.0;
                        chart.push(p.subject, p.hadm, p.stay, t, items[0], v + d, "mmHg");
                        chart.push(p.subject, p.hadm, p.stay, t, items[1], v - d, "mmHg");
                    }
                    _ => chart.push(p.subject, p.hadm, p.stay, t, items[rng.random_range(0..items.len())], v, ""),
                }
            } else {
                let t = within_window(rng, p.intime_min);
                labs.push(p.subject, p.hadm, f64::NAN, t, lab_item(nm.name), v, "");
            }
        }
        // a reading from outside the first day
        if vital && rng.random::<f64>() < 0.3 {
            let t = p.intime_min + rng.random_range(24 * 60..48 * 60);
            let item = vital_items(nm.name)[0];
            let v = if nm.name == "BT" { 98.0 } else { clamp(nm, nm.mean + 2.0 * nm.sd) };
            chart.push(p.subject, p.hadm, p.stay, t, item, v, "");
        }
    }
    if rng.random::<f64>() < cfg.implausible_rate {
        let t = within_window(rng, p.intime_min);
        chart.push(p.subject, p.hadm, p.stay, t, 220045, 999.0, "bpm");
    }
    if rng.random::<f64>() < cfg.implausible_rate {
        let t = within_window(rng, p.intime_min);
        labs.push(p.subject, p.hadm, f64::NAN, t, lab_item("WBC"), 0.2, "");
    }
    if !masks[GCS_TOTAL][i] {
        for (item, (mean, hi)) in [220739, 223900, 223901].into_iter().zip(lat.gcs[i].iter().zip([4.0, 5.0, 6.0])) {
            for _ in 0..3 {
                let t = within_window(rng, p.intime_min);
                let v = (mean + 0.5 * normal(rng)).round().clamp(1.0, hi);
                chart.push(p.subject, p.hadm, p.stay, t, item, v, "");
            }
        }
    }
}

/// Embedding rows: low-rank Gaussian factors, one of which is the note
/// latent, plus small isotropic noise.
struct EmbeddingModel {
    loadings: DMatrix<f64>, // dim x rank
    scales: Vec<f64>,
    text_factor: usize,
    noise: f64,
}

impl EmbeddingModel {
    fn new(dim: usize, text_factor: usize, rng: &mut ChaCha8Rng) -> Self {
        let scales = vec![1.0, 0.85, 0.7, 0.6, 0.5, 0.4, 0.35, 0.3];
        let loadings = DMatrix::from_fn(dim, scales.len(), |_, _| normal(rng) / (dim as f64).sqrt());
        let signal: f64 = scales.iter().map(|s| s * s).sum();
        let noise = (0.05 * signal / dim as f64).sqrt();
        Self { loadings, scales, text_factor, noise }
    }

    fn sample(&self, t: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let f: Vec<f64> = (0..self.scales.len())
            .map(|k| self.scales[k] * if k == self.text_factor { t } else { normal(rng) })
            .collect();
        (0..self.loadings.nrows())
            .map(|d| {
                let v: f64 = (0..f.len()).map(|k| self.loadings[(d, k)] * f[k]).sum::<f64>() + self.noise * normal(rng);
                (v * 1e6).round() / 1e6
            })
            .collect()
    }
}

fn render_notes(cfg: &SynthConfig, lat: &Latent) -> (PatientFrame, PatientFrame, PatientFrame, PatientFrame) {
    let mut rng = seed::rng(seed::derive(cfg.seed, "synth.notes"));
    let mut emb_rng = seed::rng(seed::derive(cfg.seed, "synth.embeddings"));
    let vocab = pseudo_vocabulary(VOCAB_SIZE);
    let dim = cfg.embedding_dim;
    let models = [EmbeddingModel::new(dim, 1, &mut emb_rng), EmbeddingModel::new(dim, 2, &mut emb_rng)];

    let mut notes: [(Vec<f64>, Vec<f64>, Vec<String>, Vec<String>); 2] = Default::default();
    let mut emb: [(Vec<f64>, Vec<Vec<f64>>); 2] = Default::default();
    for i in 0..cfg.n_patients {
        let subject = subject_id(i);
        let hadm = hadm_id(i, false);
        let base = (BASE_HOURS + 500 * i as i64) * 60;
        for (kind, coverage) in [cfg.note_coverage.discharge, cfg.note_coverage.radiology].into_iter().enumerate() {
            if rng.random::<f64>() >= coverage {
                continue;
            }
            let count = if kind == 0 { 1 } else { rng.random_range(1..4) };
            for _ in 0..count {
                let minute = base + rng.random_range(0..200 * 60);
                let text = pseudo_note(&mut rng, &vocab, lat.text[i], 40 * kind);
                notes[kind].0.push(subject);
                notes[kind].1.push(hadm);
                notes[kind].2.push(timestamp(minute));
                notes[kind].3.push(text);
            }
            emb[kind].0.push(hadm);
            emb[kind].1.push(models[kind].sample(lat.text[i], &mut emb_rng));
        }
    }
    let [d, r] = notes.map(|(s, h, t, x)| {
        PatientFrame::new(vec![
            Column::numeric(SUBJECT_ID, s),
            Column::numeric(HADM_ID, h),
            Column::text(CHARTTIME, t),
            Column::text("text", x),
        ])
        .expect("equal lengths")
    });
    let [de, re] = emb.map(|(h, rows)| {
        let mut cols = vec![Column::numeric(HADM_ID, h)];
        for k in 0..dim {
            cols.push(Column::numeric(format!("e{k}"), rows.iter().map(|r| r[k]).collect()));
        }
        PatientFrame::new(cols).expect("equal lengths")
    });
    (d, r, de, re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{normalize_text, STOPWORDS};

    fn small() -> SynthConfig {
        SynthConfig { n_patients: 300, embedding_dim: 16, ..Default::default() }
    }

    #[test]
    fn prevalence_hits_target() {
        let cfg = SynthConfig { n_patients: 4000, embedding_dim: 8, ..Default::default() };
        let (frame, truth) = generate_patient_level(&cfg).unwrap();
        assert!((truth.prevalence - 0.52).abs() < 0.02);
        let y = frame.numeric(OUTCOME).unwrap();
        assert!((y.iter().sum::<f64>() / y.len() as f64 - truth.prevalence).abs() < 1e-12);
        assert!(truth.bayes_auc > 0.8);
    }

    #[test]
    fn null_effects_give_chance_level_oracle() {
        let cfg = SynthConfig { true_beta: BTreeMap::new(), text_signal_strength: 0.0, n_patients: 2000, ..small() };
        let (_, truth) = generate_patient_level(&cfg).unwrap();
        assert!((sigmoid(truth.intercept) - 0.52).abs() < 1e-9);
        assert!((truth.prevalence - 0.52).abs() < 0.03);
    }

    #[test]
    fn invalid_configs() {
        assert!(matches!(
            generate_patient_level(&SynthConfig { prevalence_target: 1.0, ..small() }),
            Err(SynthError::InfeasiblePrevalence(_))
        ));
        let mut cfg = small();
        cfg.missing_rates.insert("HR".into(), 1.5);
        assert!(matches!(generate(&cfg), Err(SynthError::InvalidConfig(_))));
        let mut cfg = small();
        cfg.true_beta.insert("Unobtainium".into(), 1.0);
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn generation_is_deterministic_and_consistent() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        for ((na, fa), (nb, fb)) in a.tables.iter().zip(&b.tables) {
            assert_eq!(na, nb);
            assert_eq!(fa, fb);
        }
        let (level, truth) = generate_patient_level(&small()).unwrap();
        assert_eq!(truth, a.truth);
        assert_eq!(level.n_rows(), 300);
        let other = generate(&SynthConfig { seed: 7, ..small() }).unwrap();
        assert_ne!(other.table("chartevents.csv"), a.table("chartevents.csv"));
    }

    #[test]
    fn pseudo_words_survive_tokenization() {
        let vocab = pseudo_vocabulary(VOCAB_SIZE);
        let unique: std::collections::HashSet<_> = vocab.iter().collect();
        assert_eq!(unique.len(), VOCAB_SIZE);
        for w in &vocab {
            assert!(!STOPWORDS.contains(&w.as_str()));
            assert_eq!(normalize_text(w), vec![w.clone()]);
        }
    }

    #[test]
    fn collinear_pairs_are_collinear() {
        let (frame, _) = generate_patient_level(&SynthConfig { missing_rates: BTreeMap::new(), ..small() }).unwrap();
        let corr = |a: &str, b: &str| {
            let (x, y) = (frame.numeric(a).unwrap(), frame.numeric(b).unwrap());
            let (mx, my) = (crate::linalg::mean(x), crate::linalg::mean(y));
            let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
            let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
            sxy / (sxx * syy).sqrt()
        };
        assert!(corr("PT", "INR") > 0.95);
        assert!(corr("Hematocrit", "Hemoglobin") > 0.9);
        assert!(corr("MBP", "DBP") > 0.6);
    }

    #[test]
    fn note_coverage_and_embedding_shape() {
        let out = generate(&SynthConfig { n_patients: 2000, embedding_dim: 12, ..Default::default() }).unwrap();
        let emb = out.table("discharge_emb.csv").unwrap();
        assert_eq!(emb.n_cols(), 13);
        let cov = emb.n_rows() as f64 / 2000.0;
        assert!((cov - 0.701).abs() < 0.03);
        let rad = out.table("radiology_emb.csv").unwrap();
        assert!((rad.n_rows() as f64 / 2000.0 - 0.71).abs() < 0.03);
    }
}
