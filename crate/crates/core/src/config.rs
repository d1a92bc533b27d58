//! Run configuration: a TOML file with optional sections, resolved into
//! concrete settings with defaults filled in and recorded for the echo.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cohort::CohortConfig;
use crate::frame::{ColumnKind, ColumnSpec};
use crate::gbt::GbtConfig;
use crate::glm::VifConfig;
use crate::harmonize::{default_plausibility, HarmonizeConfig, PlausibilityRule};
use crate::impute::{default_policies, ImputeMethod, ImputePolicy, MiceConfig};
use crate::lasso::{CdOptions, CvConfig, LambdaRule};
use crate::seed;
use crate::synth::SynthConfig;
use crate::text::TextConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config does not parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), reason: reason.into() }
}

/// Input tables in the order the stages consume them. Embedding tables are
/// optional.
pub const INPUT_TABLES: [&str; 12] = [
    "diagnoses_icd",
    "patients",
    "icustays",
    "admissions",
    "chartevents",
    "labevents",
    "procedureevents",
    "inputevents",
    "discharge",
    "radiology",
    "discharge_emb",
    "radiology_emb",
];

pub fn default_schema(table: &str) -> Option<Vec<ColumnSpec>> {
    let n = ColumnSpec::numeric;
    let t = ColumnSpec::text;
    let ts = ColumnSpec::timestamp;
    let spec = match table {
        "diagnoses_icd" => vec![n("subject_id"), n("hadm_id"), t("icd_code")],
        "patients" => vec![n("subject_id"), n("anchor_age")],
        "icustays" => vec![n("subject_id"), n("hadm_id"), n("stay_id"), ts("intime")],
        "admissions" => vec![n("subject_id"), n("hadm_id"), ts("dischtime"), ts("deathtime")],
        "chartevents" => vec![n("subject_id"), n("hadm_id"), n("stay_id"), ts("charttime"), n("itemid"), n("valuenum"), t("valueuom")],
        "labevents" => vec![n("subject_id"), n("hadm_id"), ts("charttime"), n("itemid"), n("valuenum"), t("valueuom")],
        "procedureevents" | "inputevents" => vec![n("subject_id"), n("hadm_id"), n("stay_id"), ts("starttime"), n("itemid")],
        "discharge" | "radiology" => vec![n("subject_id"), n("hadm_id"), ts("charttime"), t("text")],
        _ => return None,
    };
    Some(spec)
}

fn parse_spec(entry: &str) -> Option<ColumnSpec> {
    let (name, kind) = entry.split_once(':')?;
    let kind = match kind.trim() {
        "numeric" => ColumnKind::Numeric,
        "text" => ColumnKind::Text,
        "timestamp" => ColumnKind::Timestamp,
        _ => return None,
    };
    Some(ColumnSpec { name: name.trim().to_string(), kind })
}

fn spec_string(spec: &ColumnSpec) -> String {
    let kind = match spec.kind {
        ColumnKind::Numeric => "numeric",
        ColumnKind::Text => "text",
        ColumnKind::Timestamp => "timestamp",
    };
    format!("{}:{kind}", spec.name)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub calibration_bins: usize,
    /// Probability cut for accuracy, F1 and recall.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectConfig {
    pub alpha: f64,
    pub top_k_structured: usize,
    pub top_k_text: usize,
    /// Also offer `X_min` / `X_max` aggregates as candidates.
    pub include_extremes: bool,
}

/// One resolved setting as shown in the echoed config.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoEntry {
    pub section: String,
    pub key: String,
    pub value: String,
    pub defaulted: bool,
    pub note: Option<&'static str>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub input_dir: PathBuf,
    pub input_overrides: BTreeMap<String, PathBuf>,
    pub output_dir: PathBuf,
    pub schemas: BTreeMap<String, Vec<ColumnSpec>>,
    pub synth: SynthConfig,
    pub cohort: CohortConfig,
    pub harmonize: HarmonizeConfig,
    pub policies: Vec<ImputePolicy>,
    pub impute_fallback: ImputeMethod,
    pub mice: MiceConfig,
    pub text: TextConfig,
    pub lasso: CvConfig,
    pub gbt: GbtConfig,
    pub select: SelectConfig,
    pub vif: VifConfig,
    pub eval: EvalConfig,
    pub split: SplitConfig,
    pub echo: Vec<EchoEntry>,
    pub warnings: Vec<String>,
}

impl RunConfig {
    pub fn input_path(&self, table: &str) -> PathBuf {
        self.input_overrides.get(table).cloned().unwrap_or_else(|| self.input_dir.join(format!("{table}.csv")))
    }

    pub fn schema(&self, table: &str) -> &[ColumnSpec] {
        self.schemas.get(table).map_or(&[], Vec::as_slice)
    }

    /// Normalized TOML with every filled-in default marked.
    pub fn echo_text(&self) -> String {
        let mut out = String::new();
        let mut section = None;
        for e in &self.echo {
            if section != Some(&e.section) {
                if !e.section.is_empty() {
                    let _ = writeln!(out, "{}[{}]", if out.is_empty() { "" } else { "\n" }, e.section);
                }
                section = Some(&e.section);
            }
            if e.key.is_empty() {
                out.push_str(&e.value);
                out.push('\n');
                continue;
            }
            let mut line = format!("{} = {}", e.key, e.value);
            match (e.defaulted, e.note) {
                (true, Some(n)) => line.push_str(&format!("  # default: {n}")),
                (true, None) => line.push_str("  # default"),
                (false, Some(n)) => line.push_str(&format!("  # {n}")),
                (false, None) => {}
            }
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

/// Reads, resolves and validates a config file. `seed_override` replaces the
/// root seed (as given on the command line).
pub fn validate_config(path: &Path, seed_override: Option<u64>) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base, seed_override)
}

/// Relative paths in `text` resolve against `base`.
pub fn parse_config(text: &str, base: &Path, seed_override: Option<u64>) -> Result<RunConfig, ConfigError> {
    let mut root: toml::Table = toml::from_str(text)?;
    let mut r = Resolver { echo: Vec::new(), warnings: Vec::new() };

    const SECTIONS: [&str; 15] =
        ["seed", "inputs", "output", "schema", "synth", "cohort", "harmonize", "impute", "mice", "text", "lasso", "gbt", "select", "vif", "eval"];
    for key in root.keys() {
        if !SECTIONS.contains(&key.as_str()) && key != "split" {
            return Err(invalid(key, "unknown section"));
        }
    }

    let seed_file = take::<u64>(&mut root, "", "seed")?;
    let seed = seed_override.or(seed_file).unwrap_or(42);
    r.record("", "seed", &seed, seed_override.is_none() && seed_file.is_none(), Some("root seed, expanded per stage"));

    let mut sec = |name: &str| -> Result<toml::Table, ConfigError> {
        match root.remove(name) {
            None => Ok(toml::Table::new()),
            Some(toml::Value::Table(t)) => Ok(t),
            Some(_) => Err(invalid(name, "expected a table")),
        }
    };

    // inputs / output
    let mut inputs = sec("inputs")?;
    let input_dir: String = r.value(&mut inputs, "inputs", "dir", "data".to_string(), None)?;
    let mut input_overrides = BTreeMap::new();
    for table in INPUT_TABLES {
        if let Some(p) = take::<String>(&mut inputs, "inputs", table)? {
            r.record("inputs", table, &p, false, None);
            input_overrides.insert(table.to_string(), base.join(p));
        }
    }
    no_leftovers(&inputs, "inputs")?;
    let mut output = sec("output")?;
    let output_dir: String = r.value(&mut output, "output", "dir", "run".to_string(), None)?;
    no_leftovers(&output, "output")?;

    // schemas
    let mut schema_t = sec("schema")?;
    let mut schemas = BTreeMap::new();
    for table in INPUT_TABLES {
        let Some(default) = default_schema(table) else { continue };
        let default_strings: Vec<String> = default.iter().map(spec_string).collect();
        let given: Vec<String> = r.value(&mut schema_t, "schema", table, default_strings, None)?;
        let specs = given
            .iter()
            .map(|s| parse_spec(s).ok_or_else(|| invalid(&format!("schema.{table}"), format!("`{s}` is not name:numeric|text|timestamp"))))
            .collect::<Result<Vec<_>, _>>()?;
        schemas.insert(table.to_string(), specs);
    }
    no_leftovers(&schema_t, "schema")?;

    // synth
    let synth_t = sec("synth")?;
    let synth_seed_given = synth_t.contains_key("seed");
    let mut synth: SynthConfig = deserialize(synth_t, "synth")?;
    if !synth_seed_given {
        synth.seed = stage_seed(seed, "synth");
    }
    synth.validate().map_err(|e| invalid("synth", e.to_string()))?;
    r.record("synth", "n_patients", &synth.n_patients, false, None);
    r.record("synth", "prevalence_target", &synth.prevalence_target, false, Some("in-hospital mortality of the study cohort"));
    r.record("synth", "text_signal_strength", &synth.text_signal_strength, false, None);
    r.record("synth", "embedding_dim", &synth.embedding_dim, false, None);
    r.record("synth", "seed", &synth.seed, !synth_seed_given, Some("derived from the root seed"));

    // cohort
    let mut c = sec("cohort")?;
    let d = CohortConfig::default();
    let cohort = CohortConfig {
        icd_codes: r.value(&mut c, "cohort", "icd_codes", d.icd_codes, Some("ICD-9 4275 and ICD-10 I46 family"))?,
        min_age: r.value(&mut c, "cohort", "min_age", d.min_age, Some("adults only"))?,
        code_column: r.value(&mut c, "cohort", "code_column", d.code_column, None)?,
        age_column: r.value(&mut c, "cohort", "age_column", d.age_column, None)?,
    };
    no_leftovers(&c, "cohort")?;
    if cohort.icd_codes.is_empty() {
        return Err(invalid("cohort.icd_codes", "must not be empty"));
    }

    // harmonize
    let mut h = sec("harmonize")?;
    let mut harmonize = HarmonizeConfig::default();
    if let Some(rules) = take::<Vec<RawRule>>(&mut h, "harmonize", "plausibility")? {
        r.record("harmonize", "plausibility", &rules, false, None);
        harmonize.plausibility = rules.into_iter().map(RawRule::into_rule).collect();
    } else {
        r.record_raw("harmonize", "", format!("# plausibility: {} built-in rules", default_plausibility().len()), true, None);
    }
    for (i, rule) in harmonize.plausibility.iter().enumerate() {
        rule.validate().map_err(|e| invalid(&format!("harmonize.plausibility[{i}]"), e.to_string()))?;
    }
    no_leftovers(&h, "harmonize")?;

    // impute
    let mut im = sec("impute")?;
    let default_map: BTreeMap<String, String> =
        default_policies().iter().map(|p| (p.variable.clone(), p.method.as_str().to_string())).collect();
    let policy_map: BTreeMap<String, String> =
        r.value(&mut im, "impute", "policies", default_map, Some("mean, median and chained-equation tiers"))?;
    let policies = policy_map
        .iter()
        .map(|(v, m)| {
            m.parse::<ImputeMethod>()
                .map(|method| ImputePolicy::new(v, method))
                .map_err(|e| invalid(&format!("impute.policies.{v}"), e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let fallback: String = r.value(&mut im, "impute", "fallback", "mice".to_string(), None)?;
    let impute_fallback = fallback.parse::<ImputeMethod>().map_err(|e| invalid("impute.fallback", e.to_string()))?;
    no_leftovers(&im, "impute")?;

    let mut mi = sec("mice")?;
    let dm = MiceConfig::default();
    let mice = MiceConfig {
        m: r.value(&mut mi, "mice", "m", dm.m, Some("five completed datasets"))?,
        max_iter: r.value(&mut mi, "mice", "max_iter", dm.max_iter, None)?,
        seed: r.value(&mut mi, "mice", "seed", stage_seed(seed, "mice"), Some("derived from the root seed"))?,
        ridge_penalty: r.value(&mut mi, "mice", "ridge_penalty", dm.ridge_penalty, None)?,
        exclude: dm.exclude,
    };
    mice.validate().map_err(|e| invalid("mice", e.to_string()))?;
    no_leftovers(&mi, "mice")?;

    // text
    let mut tx = sec("text")?;
    let dt = TextConfig::default();
    let text_cfg = TextConfig {
        max_terms: r.value(&mut tx, "text", "max_terms", dt.max_terms, Some("500-term vocabulary"))?,
        svd_target: r.value(&mut tx, "text", "svd_target", dt.svd_target, Some("80% explained variance"))?,
        pca_target: r.value(&mut tx, "text", "pca_target", dt.pca_target, Some("90% explained variance"))?,
    };
    no_leftovers(&tx, "text")?;
    if text_cfg.max_terms == 0 {
        return Err(invalid("text.max_terms", "must be positive"));
    }
    for (field, v) in [("text.svd_target", text_cfg.svd_target), ("text.pca_target", text_cfg.pca_target)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(invalid(field, format!("{v} is outside (0, 1]")));
        }
    }

    // lasso
    let mut la = sec("lasso")?;
    let dl = CvConfig::default();
    let rule: String = r.value(&mut la, "lasso", "rule", dl.rule.as_str().to_string(), Some("75th percentile of the 1-SE range"))?;
    let lasso = CvConfig {
        folds: r.value(&mut la, "lasso", "folds", dl.folds, Some("10-fold cross-validation"))?,
        grid_size: r.value(&mut la, "lasso", "grid_size", dl.grid_size, None)?,
        min_ratio: r.value(&mut la, "lasso", "min_ratio", dl.min_ratio, None)?,
        seed: r.value(&mut la, "lasso", "seed", stage_seed(seed, "lasso"), Some("derived from the root seed"))?,
        rule: rule.parse::<LambdaRule>().map_err(|e| invalid("lasso.rule", e))?,
        cd: CdOptions::default(),
    };
    no_leftovers(&la, "lasso")?;
    if lasso.folds < 2 {
        return Err(invalid("lasso.folds", "need at least 2 folds"));
    }
    if lasso.grid_size < 2 {
        return Err(invalid("lasso.grid_size", "need at least 2 grid points"));
    }
    if !(lasso.min_ratio > 0.0 && lasso.min_ratio < 1.0) {
        return Err(invalid("lasso.min_ratio", "must lie in (0, 1)"));
    }

    // gbt
    let mut gb = sec("gbt")?;
    let dg = GbtConfig::default();
    let gbt = GbtConfig {
        max_depth: r.value(&mut gb, "gbt", "max_depth", dg.max_depth, Some("depth-3 trees"))?,
        learning_rate: r.value(&mut gb, "gbt", "learning_rate", dg.learning_rate, Some("learning rate 0.05"))?,
        n_trees: r.value(&mut gb, "gbt", "n_trees", dg.n_trees, Some("100 boosting rounds"))?,
        subsample: r.value(&mut gb, "gbt", "subsample", dg.subsample, Some("row subsample 0.8"))?,
        reg_lambda: r.value(&mut gb, "gbt", "reg_lambda", dg.reg_lambda, None)?,
        gamma: r.value(&mut gb, "gbt", "gamma", dg.gamma, None)?,
        seed: r.value(&mut gb, "gbt", "seed", stage_seed(seed, "gbt"), Some("derived from the root seed"))?,
    };
    gbt.validate().map_err(|e| invalid("gbt", e.to_string()))?;
    no_leftovers(&gb, "gbt")?;

    // select
    let mut se = sec("select")?;
    let select = SelectConfig {
        alpha: r.value(&mut se, "select", "alpha", 0.05, Some("univariate screen at p < 0.05"))?,
        top_k_structured: r.value(&mut se, "select", "top_k_structured", 17, Some("17 top-ranked boosted-tree features"))?,
        top_k_text: r.value(&mut se, "select", "top_k_text", 64, Some("64 top-ranked features with text"))?,
        include_extremes: r.value(&mut se, "select", "include_extremes", false, None)?,
    };
    no_leftovers(&se, "select")?;
    if !(select.alpha > 0.0 && select.alpha < 1.0) {
        return Err(invalid("select.alpha", "must lie in (0, 1)"));
    }
    if select.top_k_structured == 0 || select.top_k_text == 0 {
        return Err(invalid("select.top_k_structured", "top-k counts must be positive"));
    }

    // vif
    let mut vi = sec("vif")?;
    let dv = VifConfig::default();
    let prefs: Vec<Vec<String>> = dv.preferences.iter().map(|(k, d)| vec![k.clone(), d.clone()]).collect();
    let vif = VifConfig {
        warn_threshold: r.value(&mut vi, "vif", "warn_threshold", dv.warn_threshold, Some("VIF above 5 is problematic"))?,
        drop_threshold: r.value(&mut vi, "vif", "drop_threshold", dv.drop_threshold, Some("drop while any VIF exceeds 10"))?,
        preferences: r
            .value(&mut vi, "vif", "preferences", prefs, Some("keep PT over INR, Hemoglobin over Hematocrit, MBP over DBP"))?
            .into_iter()
            .map(|pair| match pair.as_slice() {
                [k, d] => Ok((k.clone(), d.clone())),
                _ => Err(invalid("vif.preferences", "each entry must be [keep, drop]")),
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    no_leftovers(&vi, "vif")?;
    if !(vif.warn_threshold > 1.0 && vif.drop_threshold > 1.0) {
        return Err(invalid("vif.drop_threshold", "VIF thresholds must exceed 1"));
    }

    // eval
    let mut ev = sec("eval")?;
    let eval = EvalConfig {
        calibration_bins: r.value(&mut ev, "eval", "calibration_bins", 10, Some("ten equal-frequency bins"))?,
        threshold: r.value(&mut ev, "eval", "threshold", 0.5, None)?,
    };
    no_leftovers(&ev, "eval")?;
    if eval.calibration_bins < 2 {
        return Err(invalid("eval.calibration_bins", "need at least 2 bins"));
    }
    if !(eval.threshold > 0.0 && eval.threshold < 1.0) {
        return Err(invalid("eval.threshold", "must lie in (0, 1)"));
    }

    // split
    let mut sp = sec("split")?;
    let train_fraction: f64 = r.value(&mut sp, "split", "train_fraction", 0.8, Some("80/20 stratified holdout"))?;
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid("split.train_fraction", format!("{train_fraction} is outside (0, 1)")));
    }
    let split_seed = match take::<u64>(&mut sp, "split", "seed")? {
        Some(s) => {
            r.record("split", "seed", &s, false, None);
            s
        }
        None => {
            r.warnings.push(format!("split.seed not set; using {seed}"));
            r.record("split", "seed", &seed, true, Some("root seed"));
            seed
        }
    };
    no_leftovers(&sp, "split")?;

    for w in &r.warnings {
        log::warn!("{w}");
    }
    Ok(RunConfig {
        seed,
        input_dir: base.join(input_dir),
        input_overrides,
        output_dir: base.join(output_dir),
        schemas,
        synth,
        cohort,
        harmonize,
        policies,
        impute_fallback,
        mice,
        text: text_cfg,
        lasso,
        gbt,
        select,
        vif,
        eval,
        split: SplitConfig { train_fraction, seed: split_seed },
        echo: r.echo,
        warnings: r.warnings,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    variable: String,
    lower: f64,
    upper: f64,
    #[serde(default)]
    unit: String,
    #[serde(default = "yes")]
    lower_inclusive: bool,
}

fn yes() -> bool {
    true
}

impl RawRule {
    fn into_rule(self) -> PlausibilityRule {
        PlausibilityRule {
            variable: self.variable,
            lower: self.lower,
            upper: self.upper,
            unit: self.unit,
            lower_inclusive: self.lower_inclusive,
        }
    }
}

/// Per-stage seed from the root seed, kept within TOML's integer range so the
/// echoed config parses back.
pub fn stage_seed(root: u64, stage: &str) -> u64 {
    seed::derive(root, stage) >> 1
}

fn field(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

fn deserialize<T: DeserializeOwned>(v: impl Into<toml::Value>, path: &str) -> Result<T, ConfigError> {
    v.into().try_into().map_err(|e: toml::de::Error| invalid(path, e.message().to_string()))
}

fn take<T: DeserializeOwned>(t: &mut toml::Table, section: &str, key: &str) -> Result<Option<T>, ConfigError> {
    t.remove(key).map(|v| deserialize(v, &field(section, key))).transpose()
}

fn no_leftovers(t: &toml::Table, section: &str) -> Result<(), ConfigError> {
    match t.keys().next() {
        Some(k) => Err(invalid(&field(section, k), "unknown key")),
        None => Ok(()),
    }
}

struct Resolver {
    echo: Vec<EchoEntry>,
    warnings: Vec<String>,
}

impl Resolver {
    fn value<T: DeserializeOwned + Serialize>(
        &mut self,
        t: &mut toml::Table,
        section: &str,
        key: &str,
        default: T,
        note: Option<&'static str>,
    ) -> Result<T, ConfigError> {
        let given = take(t, section, key)?;
        let defaulted = given.is_none();
        let v = given.unwrap_or(default);
        self.record(section, key, &v, defaulted, note);
        Ok(v)
    }

    fn record<T: Serialize + ?Sized>(&mut self, section: &str, key: &str, v: &T, defaulted: bool, note: Option<&'static str>) {
        let value = toml::Value::try_from(v).map_or_else(|_| "?".to_string(), |v| v.to_string());
        self.record_raw(section, key, value, defaulted, note);
    }

    fn record_raw(&mut self, section: &str, key: &str, value: String, defaulted: bool, note: Option<&'static str>) {
        self.echo.push(EchoEntry { section: section.into(), key: key.into(), value, defaulted, note });
    }
}
