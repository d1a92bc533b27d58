//! Structured feature assembly: first-24h windowing, unit alignment,
//! plausibility masking, per-stay aggregation, GCS total and binary flags.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::cohort::{icd_matches, INTIME};
use crate::frame::{format_number, Column, FrameError, PatientFrame, HADM_ID, STAY_ID, SUBJECT_ID};

pub const CHARTTIME: &str = "charttime";
pub const STARTTIME: &str = "starttime";
pub const ITEMID: &str = "itemid";
pub const VALUENUM: &str = "valuenum";
pub const VALUEUOM: &str = "valueuom";
pub const GCS_TOTAL: &str = "GCS_Total";
pub const GCS_EYE: &str = "GCS_Eye";
pub const GCS_VERBAL: &str = "GCS_Verbal";
pub const GCS_MOTOR: &str = "GCS_Motor";

pub const VITALS: [&str; 7] = ["HR", "SBP", "DBP", "MBP", "RR", "BT", "SpO2"];
pub const LABS: [&str; 17] = [
    "Hematocrit",
    "Hemoglobin",
    "Platelet",
    "WBC",
    "PT",
    "INR",
    "Creatinine",
    "BUN",
    "Glucose",
    "Potassium",
    "Sodium",
    "Calcium",
    "Chloride",
    "AnionGap",
    "Bicarbonate",
    "Lactate",
    "pH",
];
pub const COMORBIDITY_FLAGS: [&str; 5] = ["hypertension", "heart_failure", "myocardial_infarction", "diabetes", "copd"];
pub const TREATMENT_FLAGS: [&str; 3] = ["received_ventilation", "epinephrine", "dopamine"];

const WINDOW_HOURS: f64 = 24.0;

#[derive(Debug, Error)]
pub enum HarmonizeError {
    #[error("GCS component `{component}` = {value} outside [{lo}, {hi}]")]
    ComponentOutOfRange { component: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("invalid plausibility rule for `{0}`: lower bound must be below upper")]
    InvalidRule(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
}

/// Physiological range for one variable. Values outside are masked.
#[derive(Debug, Clone, PartialEq)]
pub struct PlausibilityRule {
    pub variable: String,
    pub lower: f64,
    pub upper: f64,
    pub unit: String,
    /// `false` makes the lower bound exclusive.
    pub lower_inclusive: bool,
}

impl PlausibilityRule {
    pub fn new(variable: &str, lower: f64, upper: f64, unit: &str) -> Self {
        Self { variable: variable.into(), lower, upper, unit: unit.into(), lower_inclusive: true }
    }

    fn open_below(mut self) -> Self {
        self.lower_inclusive = false;
        self
    }

    pub fn admits(&self, v: f64) -> bool {
        let above = if self.lower_inclusive { v >= self.lower } else { v > self.lower };
        v.is_finite() && above && v <= self.upper
    }

    pub fn validate(&self) -> Result<(), HarmonizeError> {
        if self.lower < self.upper {
            Ok(())
        } else {
            Err(HarmonizeError::InvalidRule(self.variable.clone()))
        }
    }
}

pub fn default_plausibility() -> Vec<PlausibilityRule> {
    type R = PlausibilityRule;
    vec![
        R::new("HR", 20.0, 300.0, "bpm"),
        R::new("SBP", 40.0, 300.0, "mmHg"),
        R::new("DBP", 20.0, 200.0, "mmHg"),
        R::new("MBP", 30.0, 250.0, "mmHg"),
        R::new("RR", 4.0, 60.0, "insp/min"),
        R::new("BT", 77.0, 113.0, "°F"),
        R::new("SpO2", 50.0, 100.0, "%"),
        R::new("Hematocrit", 10.0, 70.0, "%"),
        R::new("Hemoglobin", 3.0, 25.0, "g/dL"),
        R::new("Platelet", 5.0, 2000.0, "K/uL"),
        R::new("WBC", 1.0, 50.0, "K/uL"),
        R::new("PT", 5.0, 150.0, "sec"),
        R::new("INR", 0.5, 20.0, "ratio"),
        R::new("Creatinine", 0.0, 25.0, "mg/dL").open_below(),
        R::new("BUN", 1.0, 250.0, "mg/dL"),
        R::new("Glucose", 0.0, 600.0, "mg/dL").open_below(),
        R::new("Potassium", 1.5, 10.0, "mEq/L"),
        R::new("Sodium", 100.0, 180.0, "mEq/L"),
        R::new("Calcium", 3.0, 20.0, "mg/dL"),
        R::new("Chloride", 60.0, 150.0, "mEq/L"),
        R::new("AnionGap", 0.0, 60.0, "mEq/L"),
        R::new("Bicarbonate", 2.0, 60.0, "mEq/L"),
        R::new("Lactate", 0.0, 20.0, "mmol/L").open_below(),
        R::new("pH", 6.5, 8.0, "units"),
        R::new(GCS_EYE, 1.0, 4.0, "points"),
        R::new(GCS_VERBAL, 1.0, 5.0, "points"),
        R::new(GCS_MOTOR, 1.0, 6.0, "points"),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleCount {
    pub variable: String,
    pub removed: usize,
}

/// Masks cells of each rule's column that fall outside the rule. Rows are
/// never removed.
pub fn apply_plausibility(
    frame: &PatientFrame,
    rules: &[PlausibilityRule],
) -> Result<(PatientFrame, Vec<RuleCount>), HarmonizeError> {
    let mut out = frame.clone();
    let mut counts = Vec::with_capacity(rules.len());
    for rule in rules {
        rule.validate()?;
        let col = frame.column(&rule.variable)?;
        let vals = col.as_numeric().ok_or_else(|| FrameError::NonNumericColumn(rule.variable.clone()))?;
        let mut removed = 0;
        let cleaned = vals
            .iter()
            .zip(&col.missing)
            .map(|(&v, &m)| {
                if m {
                    f64::NAN
                } else if rule.admits(v) {
                    v
                } else {
                    removed += 1;
                    f64::NAN
                }
            })
            .collect();
        out = out.with_column(Column::numeric(rule.variable.clone(), cleaned))?;
        counts.push(RuleCount { variable: rule.variable.clone(), removed });
    }
    Ok((out, counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TempUnit {
    Celsius,
    Fahrenheit,
}

pub fn convert_temperature(value: f64, unit: TempUnit) -> f64 {
    match unit {
        TempUnit::Celsius => value * 9.0 / 5.0 + 32.0,
        TempUnit::Fahrenheit => value,
    }
}

pub fn fahrenheit_to_celsius(value: f64) -> f64 {
    (value - 32.0) * 5.0 / 9.0
}

/// Fahrenheit reading for a temperature with an optional unit label.
/// Unlabelled values below 50 are taken as Celsius.
pub fn resolve_temperature(value: f64, unit: Option<TempUnit>) -> f64 {
    let unit = unit.unwrap_or(if value < 50.0 { TempUnit::Celsius } else { TempUnit::Fahrenheit });
    convert_temperature(value, unit)
}

fn parse_unit(label: &str) -> Option<TempUnit> {
    let l = label.trim().trim_start_matches('°').to_ascii_lowercase();
    match l.as_str() {
        "c" | "deg. c" | "celsius" => Some(TempUnit::Celsius),
        "f" | "deg. f" | "fahrenheit" => Some(TempUnit::Fahrenheit),
        _ => None,
    }
}

pub fn mean_bp(sbp: f64, dbp: f64) -> f64 {
    (sbp + 2.0 * dbp) / 3.0
}

/// Per-stay component means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcsComponents {
    pub eye: f64,
    pub verbal: f64,
    pub motor: f64,
}

pub fn gcs_total(c: &GcsComponents) -> Result<f64, HarmonizeError> {
    for (component, value, lo, hi) in
        [("eye", c.eye, 1.0, 4.0), ("verbal", c.verbal, 1.0, 5.0), ("motor", c.motor, 1.0, 6.0)]
    {
        if !(lo..=hi).contains(&value) {
            return Err(HarmonizeError::ComponentOutOfRange { component, value, lo, hi });
        }
    }
    Ok(c.eye + c.verbal + c.motor)
}

/// Fills `GCS_Total` from the component columns on every row where all
/// three components are present.
pub fn complete_gcs_total(frame: &PatientFrame) -> Result<PatientFrame, HarmonizeError> {
    let (e, v, m) = (frame.column(GCS_EYE)?, frame.column(GCS_VERBAL)?, frame.column(GCS_MOTOR)?);
    let mut total = Vec::with_capacity(frame.n_rows());
    for r in 0..frame.n_rows() {
        total.push(match (e.get(r), v.get(r), m.get(r)) {
            (Some(eye), Some(verbal), Some(motor)) => gcs_total(&GcsComponents { eye, verbal, motor })?,
            _ => f64::NAN,
        });
    }
    Ok(frame.clone().with_column(Column::numeric(GCS_TOTAL, total))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WindowCounts {
    pub kept: usize,
    pub outside: usize,
    pub unlinked: usize,
}

pub fn window_24h(events: &PatientFrame, stays: &PatientFrame) -> Result<(PatientFrame, WindowCounts), HarmonizeError> {
    window_24h_by(events, stays, CHARTTIME)
}

/// Keeps events with `intime <= time < intime + 24h` of their stay. Events
/// link through `stay_id` when present, otherwise through `hadm_id`. The
/// output carries a filled `stay_id` column; unlinked events are dropped.
pub fn window_24h_by(
    events: &PatientFrame,
    stays: &PatientFrame,
    time_col: &str,
) -> Result<(PatientFrame, WindowCounts), HarmonizeError> {
    let stay_ids = stays.column(STAY_ID)?;
    let intimes = stays.column(INTIME)?;
    let mut by_stay: HashMap<i64, f64> = HashMap::new();
    let mut by_hadm: HashMap<i64, (i64, f64)> = HashMap::new();
    let hadm = stays.column(HADM_ID).ok();
    for r in 0..stays.n_rows() {
        if let (Some(s), Some(t)) = (stay_ids.get(r), intimes.get(r)) {
            by_stay.insert(s as i64, t);
            if let Some(h) = hadm.and_then(|c| c.get(r)) {
                by_hadm.insert(h as i64, (s as i64, t));
            }
        }
    }

    let time = events.column(time_col)?;
    let ev_stay = events.column(STAY_ID).ok().filter(|c| c.is_numeric());
    let ev_hadm = events.column(HADM_ID).ok().filter(|c| c.is_numeric());
    let mut counts = WindowCounts::default();
    let mut rows = Vec::new();
    let mut linked_stay = Vec::new();
    for r in 0..events.n_rows() {
        let link = match ev_stay.and_then(|c| c.get(r)) {
            Some(s) => by_stay.get(&(s as i64)).map(|&t| (s as i64, t)),
            None => ev_hadm.and_then(|c| c.get(r)).and_then(|h| by_hadm.get(&(h as i64)).copied()),
        };
        let (Some((stay, intime)), Some(t)) = (link, time.get(r)) else {
            counts.unlinked += 1;
            continue;
        };
        if t >= intime && t < intime + WINDOW_HOURS {
            counts.kept += 1;
            rows.push(r);
            linked_stay.push(stay as f64);
        } else {
            counts.outside += 1;
        }
    }
    let out = events.select_rows(&rows).with_column(Column::numeric(STAY_ID, linked_stay))?;
    Ok((out, counts))
}

/// Measurement item: output variable plus a temperature unit when the item
/// itself fixes one.
#[derive(Debug, Clone, PartialEq)]
pub struct Item {
    pub itemid: i64,
    pub variable: String,
    pub unit: Option<TempUnit>,
}

impl Item {
    fn new(itemid: i64, variable: &str) -> Self {
        Self { itemid, variable: variable.into(), unit: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarmonizeConfig {
    /// Vital signs and GCS components from chartevents.
    pub chart_items: Vec<Item>,
    pub lab_items: Vec<Item>,
    /// Flag name to ICD patterns (same matching rules as the cohort filter).
    pub comorbidities: Vec<(String, Vec<String>)>,
    /// Flag name to procedure / input item ids.
    pub treatments: Vec<(String, Vec<i64>)>,
    pub plausibility: Vec<PlausibilityRule>,
}

impl Default for HarmonizeConfig {
    fn default() -> Self {
        let mut chart_items = vec![
            Item::new(220045, "HR"),
            Item::new(220179, "SBP"),
            Item::new(220050, "SBP"),
            Item::new(220180, "DBP"),
            Item::new(220051, "DBP"),
            Item::new(220181, "MBP"),
            Item::new(220052, "MBP"),
            Item::new(220210, "RR"),
            Item { itemid: 223761, variable: "BT".into(), unit: Some(TempUnit::Fahrenheit) },
            Item { itemid: 223762, variable: "BT".into(), unit: Some(TempUnit::Celsius) },
            Item::new(220277, "SpO2"),
        ];
        chart_items.extend([Item::new(220739, GCS_EYE), Item::new(223900, GCS_VERBAL), Item::new(223901, GCS_MOTOR)]);
        let lab_ids: [i64; 17] =
            [51221, 51222, 51265, 51301, 51274, 51237, 50912, 51006, 50931, 50971, 50983, 50893, 50902, 50868, 50882, 50813, 50820];
        let lab_items = lab_ids.iter().zip(LABS).map(|(&id, name)| Item::new(id, name)).collect();
        let codes = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            chart_items,
            lab_items,
            comorbidities: vec![
                (
                    "hypertension".into(),
                    codes(&["401*", "402*", "403*", "404*", "405*", "I10", "I11", "I12", "I13", "I15", "I16"]),
                ),
                ("heart_failure".into(), codes(&["428*", "I50"])),
                ("myocardial_infarction".into(), codes(&["410*", "I21", "I22"])),
                ("diabetes".into(), codes(&["250*", "E10", "E11", "E13", "E14"])),
                ("copd".into(), codes(&["491*", "492*", "496*", "J43", "J44"])),
            ],
            treatments: vec![
                ("received_ventilation".into(), vec![225792]),
                ("epinephrine".into(), vec![221289]),
                ("dopamine".into(), vec![221662]),
            ],
            plausibility: default_plausibility(),
        }
    }
}

/// Counts gathered while assembling structured features.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HarmonizeReport {
    pub chart_window: WindowCounts,
    pub lab_window: WindowCounts,
    pub unmapped_items: usize,
    pub celsius_converted: usize,
    pub implausible: Vec<RuleCount>,
    pub mbp_derived: usize,
}

type Series = BTreeMap<(i64, String), BTreeMap<u64, (f64, usize)>>;

/// Cleans windowed long-format events into `series`: maps items, aligns
/// temperature units, drops implausible values and pools readings of the
/// same variable at the same timestamp by averaging.
fn collect_series(
    events: &PatientFrame,
    items: &[Item],
    rules: &HashMap<&str, &PlausibilityRule>,
    report: &mut HarmonizeReport,
    removed: &mut BTreeMap<String, usize>,
    series: &mut Series,
) -> Result<(), HarmonizeError> {
    let item_map: HashMap<i64, &Item> = items.iter().map(|i| (i.itemid, i)).collect();
    let stay = events.column(STAY_ID)?;
    let time = events.column(CHARTTIME)?;
    let itemid = events.column(ITEMID)?;
    let value = events.column(VALUENUM)?;
    let uom = events.column(VALUEUOM).ok().and_then(|c| c.as_text().map(|t| (t, c)));
    for r in 0..events.n_rows() {
        let (Some(s), Some(t), Some(id), Some(mut v)) = (stay.get(r), time.get(r), itemid.get(r), value.get(r)) else {
            continue;
        };
        let Some(item) = item_map.get(&(id as i64)) else {
            report.unmapped_items += 1;
            continue;
        };
        if item.variable == "BT" {
            let label = uom.and_then(|(t, c)| (!c.missing[r]).then(|| parse_unit(&t[r]))).flatten();
            let converted = resolve_temperature(v, item.unit.or(label));
            if converted != v {
                report.celsius_converted += 1;
            }
            v = converted;
        }
        if let Some(rule) = rules.get(item.variable.as_str()) {
            if !rule.admits(v) {
                *removed.entry(item.variable.clone()).or_default() += 1;
                continue;
            }
        }
        let slot = series.entry((s as i64, item.variable.clone())).or_default().entry(t.to_bits()).or_insert((0.0, 0));
        slot.0 += v;
        slot.1 += 1;
    }
    Ok(())
}

fn treatment_stays(frames: &[&PatientFrame], ids: &[i64]) -> Result<Vec<i64>, HarmonizeError> {
    let mut out = Vec::new();
    for f in frames {
        let (stay, item) = (f.column(STAY_ID)?, f.column(ITEMID)?);
        for r in 0..f.n_rows() {
            if let (Some(s), Some(i)) = (stay.get(r), item.get(r)) {
                if ids.contains(&(i as i64)) {
                    out.push(s as i64);
                }
            }
        }
    }
    Ok(out)
}

/// One 0/1 column per comorbidity and treatment flag, aligned to the rows of
/// `stays`. Comorbidities come from any diagnosis of the admission;
/// treatments from already-windowed procedure / input events.
pub fn binary_flags(
    stays: &PatientFrame,
    diagnoses: &PatientFrame,
    treatment_events: &[&PatientFrame],
    cfg: &HarmonizeConfig,
) -> Result<PatientFrame, HarmonizeError> {
    let hadm = stays.column(HADM_ID)?;
    let stay = stays.column(STAY_ID)?;
    let dx_hadm = diagnoses.column(HADM_ID)?;
    let dx_code = diagnoses.column("icd_code")?;
    let mut codes_by_hadm: HashMap<i64, Vec<String>> = HashMap::new();
    for r in 0..diagnoses.n_rows() {
        let Some(h) = dx_hadm.get(r) else { continue };
        let code = match (dx_code.as_text(), dx_code.missing[r]) {
            (_, true) => continue,
            (Some(t), false) => t[r].clone(),
            (None, false) => format_number(dx_code.get(r).unwrap_or(f64::NAN)),
        };
        codes_by_hadm.entry(h as i64).or_default().push(code);
    }
    let mut out = PatientFrame::empty(stays.n_rows());
    for (flag, patterns) in &cfg.comorbidities {
        let vals = (0..stays.n_rows())
            .map(|r| {
                let codes = hadm.get(r).and_then(|h| codes_by_hadm.get(&(h as i64)));
                let hit = codes.is_some_and(|cs| cs.iter().any(|c| patterns.iter().any(|p| icd_matches(p, c))));
                if hit { 1.0 } else { 0.0 }
            })
            .collect();
        out = out.with_column(Column::numeric(flag.clone(), vals))?;
    }
    for (flag, ids) in &cfg.treatments {
        let treated = treatment_stays(treatment_events, ids)?;
        let vals = (0..stays.n_rows())
            .map(|r| if stay.get(r).is_some_and(|s| treated.contains(&(s as i64))) { 1.0 } else { 0.0 })
            .collect();
        out = out.with_column(Column::numeric(flag.clone(), vals))?;
    }
    Ok(out)
}

/// Raw MIMIC-shaped tables consumed by [`harmonize_structured`].
pub struct StructuredSources<'a> {
    pub chartevents: &'a PatientFrame,
    pub labevents: &'a PatientFrame,
    pub diagnoses: &'a PatientFrame,
    pub procedureevents: &'a PatientFrame,
    pub inputevents: &'a PatientFrame,
}

/// Builds the per-stay structured frame for the cohort rows: identifiers,
/// age and outcome carried over from `cohort`, then `X`, `X_min`, `X_max`
/// for every vital and lab (`X` is the 24h mean), GCS component means,
/// `GCS_Total` and the binary flags.
pub fn harmonize_structured(
    cohort: &PatientFrame,
    src: &StructuredSources<'_>,
    cfg: &HarmonizeConfig,
) -> Result<(PatientFrame, HarmonizeReport), HarmonizeError> {
    for rule in &cfg.plausibility {
        rule.validate()?;
    }
    let rules: HashMap<&str, &PlausibilityRule> = cfg.plausibility.iter().map(|r| (r.variable.as_str(), r)).collect();
    let mut report = HarmonizeReport::default();
    let mut removed = BTreeMap::new();
    let mut series = Series::new();

    let (chart, counts) = window_24h(src.chartevents, cohort)?;
    report.chart_window = counts;
    collect_series(&chart, &cfg.chart_items, &rules, &mut report, &mut removed, &mut series)?;
    let (labs, counts) = window_24h(src.labevents, cohort)?;
    report.lab_window = counts;
    collect_series(&labs, &cfg.lab_items, &rules, &mut report, &mut removed, &mut series)?;
    report.implausible = removed.into_iter().map(|(variable, removed)| RuleCount { variable, removed }).collect();

    let stay = cohort.column(STAY_ID)?;
    let stat = |s: Option<f64>, var: &str| -> Option<(f64, f64, f64)> {
        let readings = series.get(&(s? as i64, var.to_string()))?;
        let vals: Vec<f64> = readings.values().map(|&(sum, k)| sum / k as f64).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some((mean, min, max))
    };

    let mut keep: Vec<&str> = vec![SUBJECT_ID, HADM_ID, STAY_ID];
    for extra in ["anchor_age", crate::cohort::OUTCOME] {
        if cohort.has_column(extra) {
            keep.push(extra);
        }
    }
    let mut out = cohort.select_columns(&keep)?;
    let n = cohort.n_rows();
    let mut aggregated: HashMap<&str, [Vec<f64>; 3]> = HashMap::new();
    for var in VITALS.iter().chain(LABS.iter()) {
        let mut cols = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
        for r in 0..n {
            let (a, b, c) = stat(stay.get(r), var).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
            cols[0].push(a);
            cols[1].push(b);
            cols[2].push(c);
        }
        aggregated.insert(var, cols);
    }
    // MBP from SBP/DBP wherever no direct reading survived
    let [sbp, dbp] = [&aggregated["SBP"], &aggregated["DBP"]].map(|c| c.clone());
    let mbp = aggregated.get_mut("MBP").expect("MBP aggregated");
    for r in 0..n {
        if mbp[0][r].is_nan() && sbp[0][r].is_finite() && dbp[0][r].is_finite() {
            for k in 0..3 {
                let v = mean_bp(sbp[k][r], dbp[k][r]);
                mbp[k][r] = if rules.get("MBP").is_none_or(|rule| rule.admits(v)) { v } else { f64::NAN };
            }
            report.mbp_derived += 1;
        }
    }
    for var in VITALS.iter().chain(LABS.iter()) {
        let [mean, min, max] = aggregated.remove(var).expect("aggregated");
        out = out
            .with_column(Column::numeric(*var, mean))?
            .with_column(Column::numeric(format!("{var}_min"), min))?
            .with_column(Column::numeric(format!("{var}_max"), max))?;
    }
    for var in [GCS_EYE, GCS_VERBAL, GCS_MOTOR] {
        let vals = (0..n).map(|r| stat(stay.get(r), var).map_or(f64::NAN, |s| s.0)).collect();
        out = out.with_column(Column::numeric(var, vals))?;
    }
    out = complete_gcs_total(&out)?;

    let (proc, _) = window_24h_by(src.procedureevents, cohort, STARTTIME)?;
    let (inputs, _) = window_24h_by(src.inputevents, cohort, STARTTIME)?;
    let flags = binary_flags(cohort, src.diagnoses, &[&proc, &inputs], cfg)?;
    for col in flags.columns() {
        out = out.with_column(col.clone())?;
    }
    Ok((out, report))
}
