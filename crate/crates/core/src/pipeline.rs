//! Stage orchestration. Every stage reads its inputs from disk (raw tables
//! or upstream artifacts in the run directory) and writes its outputs
//! atomically, so stages can be re-run independently.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::cohort::{build_cohort, CohortError, OUTCOME};
use crate::config::{ConfigError, RunConfig};
use crate::eval::{calibration, dca_grid, decision_curve, news2_score, roc, threshold_metrics, EvalError, News2Input};
use crate::frame::{read_csv, read_csv_inferred, write_csv, Column, FrameError, PatientFrame, HADM_ID, STAY_ID, SUBJECT_ID};
use crate::gbt::{fit_gbt, gain_importance, GbtError};
use crate::glm::{consolidate_features, fit_logistic, resolve_collinearity, univariate_screen, GlmError, GlmFit, INTERCEPT};
use crate::harmonize::{
    complete_gcs_total, fahrenheit_to_celsius, harmonize_structured, HarmonizeError, StructuredSources, COMORBIDITY_FLAGS,
    GCS_EYE, GCS_MOTOR, GCS_TOTAL, GCS_VERBAL, LABS, TREATMENT_FLAGS, VITALS,
};
use crate::impute::{imputation_report, impute_single, mice_impute, rubin_pool, ImputeError, ImputeMethod, ImputePolicy};
use crate::io::write_string;
use crate::lasso::{cv_deviance, refit_selected, LassoError};
use crate::linalg::sigmoid;
use crate::matrix::{FeatureMatrix, Standardizer};
use crate::seed;
use crate::svg::{LinePlot, Series};
use crate::synth::{generate, SynthError};
use crate::text::{build_text_features, TextError, TextSources};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Cohort,
    Features,
    Impute,
    Text,
    Select,
    Fit,
    Evaluate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Synth,
        Stage::Cohort,
        Stage::Features,
        Stage::Impute,
        Stage::Text,
        Stage::Select,
        Stage::Fit,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Cohort => "cohort",
            Stage::Features => "features",
            Stage::Impute => "impute",
            Stage::Text => "text",
            Stage::Select => "select",
            Stage::Fit => "fit",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s).ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing artifact `{file}`; run the `{stage}` stage first")]
    MissingArtifact { stage: Stage, file: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Cohort(#[from] CohortError),
    #[error(transparent)]
    Harmonize(#[from] HarmonizeError),
    #[error(transparent)]
    Impute(#[from] ImputeError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Lasso(#[from] LassoError),
    #[error(transparent)]
    Gbt(#[from] GbtError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Feature sets compared throughout: `(key, label)`.
pub const FEATURE_SETS: [(&str, &str); 2] = [("structured", "Structured Only"), ("structured_text", "Structured + Text")];
/// Logistic models refit on the selected features.
pub const SELECTED_MODELS: [&str; 3] = ["LASSO", "GBT", "Combined"];
pub const NEWS2_MODEL: &str = "NEWS2";
pub const NEWS2_RAW: &str = "NEWS2 (raw score)";
pub const NEWS2_FEATURE: &str = "NEWS2";

pub mod files {
    pub const CONFIG_ECHO: &str = "config.echo.toml";
    pub const COHORT: &str = "cohort.csv";
    pub const COHORT_SUMMARY: &str = "cohort_summary.csv";
    pub const STRUCTURED: &str = "structured_features.csv";
    pub const HARMONIZE_REPORT: &str = "harmonize_report.csv";
    pub const SPLIT: &str = "split.csv";
    pub const IMPUTATION_REPORT: &str = "imputation_report.csv";
    pub const TEXT: &str = "text_features.csv";
    pub const TEXT_COVERAGE: &str = "text_coverage.csv";
    pub const TEXT_BLOCKS: &str = "text_blocks.csv";
    pub const SELECTION: &str = "selection.csv";
    pub const MODEL_SUMMARY: &str = "model_summary.csv";
    pub const MODEL_FIT: &str = "model_fit.csv";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const ROC: &str = "roc.csv";
    pub const CALIBRATION: &str = "calibration.csv";
    pub const DCA: &str = "dca.csv";
    pub const METRICS: &str = "metrics.csv";
    pub const REPORT_PSEUDO_R2: &str = "report_pseudo_r2.csv";
    pub const REPORT_METRICS: &str = "report_metrics.csv";
    pub const REPORT_MD: &str = "report.md";

    pub fn imputed(k: usize) -> String {
        format!("imputed_{k}.csv")
    }
}

/// Files a stage wrote, relative to its output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub dir: PathBuf,
    pub artifacts: Vec<String>,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    written: Vec<String>,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn require(&self, name: &str, producer: Stage) -> Result<PathBuf> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(PipelineError::MissingArtifact { stage: producer, file: name.to_string() })
        }
    }

    fn read(&self, name: &str, producer: Stage) -> Result<PatientFrame> {
        Ok(read_csv_inferred(self.require(name, producer)?)?)
    }

    fn write(&mut self, name: &str, frame: &PatientFrame) -> Result<()> {
        write_csv(frame, self.path(name))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        write_string(&self.path(name), text)?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn input(&self, table: &str) -> Result<PatientFrame> {
        let path = self.cfg.input_path(table);
        if !path.is_file() {
            return Err(ConfigError::Invalid {
                field: format!("inputs.{table}"),
                reason: format!("file not found: {}", path.display()),
            }
            .into());
        }
        Ok(read_csv(&path, self.cfg.schema(table))?)
    }

    fn optional_input(&self, table: &str) -> Result<Option<PatientFrame>> {
        let path = self.cfg.input_path(table);
        if path.is_file() {
            Ok(Some(read_csv_inferred(&path)?))
        } else {
            log::info!("optional input `{table}` not found at {}", path.display());
            Ok(None)
        }
    }
}

/// Runs one stage. Outputs go to `out` when given, else to the configured
/// run directory (the input directory for `synth`).
pub fn run_stage(stage: Stage, cfg: &RunConfig, out: Option<&Path>) -> Result<StageOutcome> {
    let default_dir = if stage == Stage::Synth { &cfg.input_dir } else { &cfg.output_dir };
    let dir = out.map_or_else(|| default_dir.clone(), Path::to_path_buf);
    std::fs::create_dir_all(&dir)?;
    let mut ctx = Ctx { cfg, dir, written: Vec::new() };
    log::info!("stage {stage} -> {}", ctx.dir.display());
    if stage != Stage::Synth {
        ctx.write_text(files::CONFIG_ECHO, &cfg.echo_text())?;
    }
    match stage {
        Stage::Synth => stage_synth(&mut ctx)?,
        Stage::Cohort => stage_cohort(&mut ctx)?,
        Stage::Features => stage_features(&mut ctx)?,
        Stage::Impute => stage_impute(&mut ctx)?,
        Stage::Text => stage_text(&mut ctx)?,
        Stage::Select => stage_select(&mut ctx)?,
        Stage::Fit => stage_fit(&mut ctx)?,
        Stage::Evaluate => stage_evaluate(&mut ctx)?,
        Stage::Report => stage_report(&mut ctx)?,
    }
    Ok(StageOutcome { stage, dir: ctx.dir, artifacts: ctx.written })
}

/// Every stage after `synth`, in order.
pub fn run_pipeline(cfg: &RunConfig, out: Option<&Path>) -> Result<Vec<StageOutcome>> {
    Stage::ALL[1..].iter().map(|&s| run_stage(s, cfg, out)).collect()
}

/// Column-wise table assembly for small report frames.
#[derive(Default)]
struct Table {
    cols: Vec<Column>,
}

impl Table {
    fn num(mut self, name: &str, v: Vec<f64>) -> Self {
        self.cols.push(Column::numeric(name, v));
        self
    }

    fn text(mut self, name: &str, v: Vec<String>) -> Self {
        self.cols.push(Column::text(name, v));
        self
    }

    fn frame(self) -> Result<PatientFrame> {
        Ok(PatientFrame::new(self.cols)?)
    }
}

fn strings<S: ToString>(v: impl IntoIterator<Item = S>) -> Vec<String> {
    v.into_iter().map(|s| s.to_string()).collect()
}

// ---- synth / cohort / features ---------------------------------------------

fn stage_synth(ctx: &mut Ctx) -> Result<()> {
    let out = generate(&ctx.cfg.synth)?;
    out.write(&ctx.dir)?;
    ctx.written.extend(out.tables.iter().map(|(n, _)| n.to_string()));
    ctx.written.push("ground_truth.csv".into());
    Ok(())
}

fn stage_cohort(ctx: &mut Ctx) -> Result<()> {
    let dx = ctx.input("diagnoses_icd")?;
    let patients = ctx.input("patients")?;
    let stays = ctx.input("icustays")?;
    let adm = ctx.input("admissions")?;
    let (cohort, s) = build_cohort(&dx, &patients, &stays, &adm, &ctx.cfg.cohort)?;
    if cohort.n_rows() == 0 {
        return Err(PipelineError::Data("cohort is empty after filtering".into()));
    }
    let steps = ["diagnosed_admissions", "linked_stays", "first_stays", "adults", "deaths"];
    let counts = [s.diagnosed_admissions, s.linked_stays, s.first_stays, s.adults, s.deaths];
    let summary = Table::default().text("step", strings(steps)).num("count", counts.iter().map(|&c| c as f64).collect());
    ctx.write(files::COHORT, &cohort)?;
    ctx.write(files::COHORT_SUMMARY, &summary.frame()?)?;
    log::info!("cohort: {} stays, {} deaths", s.adults, s.deaths);
    Ok(())
}

fn stage_features(ctx: &mut Ctx) -> Result<()> {
    let cohort = ctx.read(files::COHORT, Stage::Cohort)?;
    let chart = ctx.input("chartevents")?;
    let labs = ctx.input("labevents")?;
    let dx = ctx.input("diagnoses_icd")?;
    let procs = ctx.input("procedureevents")?;
    let inputs = ctx.input("inputevents")?;
    let src = StructuredSources { chartevents: &chart, labevents: &labs, diagnoses: &dx, procedureevents: &procs, inputevents: &inputs };
    let (features, rep) = harmonize_structured(&cohort, &src, &ctx.cfg.harmonize)?;
    let mut items = vec![
        ("chart_kept".to_string(), rep.chart_window.kept),
        ("chart_outside_window".into(), rep.chart_window.outside),
        ("chart_unlinked".into(), rep.chart_window.unlinked),
        ("lab_kept".into(), rep.lab_window.kept),
        ("lab_outside_window".into(), rep.lab_window.outside),
        ("lab_unlinked".into(), rep.lab_window.unlinked),
        ("unmapped_items".into(), rep.unmapped_items),
        ("celsius_converted".into(), rep.celsius_converted),
        ("mbp_derived".into(), rep.mbp_derived),
    ];
    items.extend(rep.implausible.iter().map(|r| (format!("implausible_{}", r.variable), r.removed)));
    let report = Table::default()
        .text("item", items.iter().map(|i| i.0.clone()).collect())
        .num("count", items.iter().map(|i| i.1 as f64).collect());
    ctx.write(files::STRUCTURED, &features)?;
    ctx.write(files::HARMONIZE_REPORT, &report.frame()?)?;
    Ok(())
}

// ---- impute ---------------------------------------------------------------

/// Stratified holdout: within each outcome class rows are ordered by stay id,
/// shuffled with the split seed and the first `fraction` go to training.
pub fn stratified_split(stay_ids: &[f64], y: &[f64], fraction: f64, split_seed: u64) -> Vec<bool> {
    let mut rng = seed::rng(seed::derive(split_seed, "split"));
    let mut train = vec![false; y.len()];
    for class in [0.0, 1.0] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.sort_by(|&a, &b| stay_ids[a].total_cmp(&stay_ids[b]));
        idx.shuffle(&mut rng);
        let n_train = (fraction * idx.len() as f64).round() as usize;
        for &i in &idx[..n_train] {
            train[i] = true;
        }
    }
    train
}

fn effective_policies(cfg: &RunConfig, frame: &PatientFrame) -> Vec<ImputePolicy> {
    let mut policies: Vec<ImputePolicy> = cfg.policies.iter().filter(|p| frame.has_column(&p.variable)).cloned().collect();
    for gcs in [GCS_EYE, GCS_VERBAL, GCS_MOTOR] {
        if frame.has_column(gcs) && !policies.iter().any(|p| p.variable == gcs) {
            policies.push(ImputePolicy::new(gcs, ImputeMethod::Mean));
        }
    }
    policies
}

fn stage_impute(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let frame = ctx.read(files::STRUCTURED, Stage::Features)?;
    let y = frame.numeric(OUTCOME)?.to_vec();
    let stays = frame.numeric(STAY_ID)?.to_vec();
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(PipelineError::Data("outcome must be 0/1 for every stay".into()));
    }
    let train = stratified_split(&stays, &y, cfg.split.train_fraction, cfg.split.seed);
    let split = Table::default()
        .num(STAY_ID, stays.clone())
        .text("set", train.iter().map(|&t| if t { "train" } else { "valid" }.to_string()).collect());
    ctx.write(files::SPLIT, &split.frame()?)?;

    let policies = effective_policies(cfg, &frame);
    let report = imputation_report(&frame, &policies, cfg.impute_fallback);
    ctx.write(
        files::IMPUTATION_REPORT,
        &Table::default()
            .text("variable", report.iter().map(|r| r.variable.clone()).collect())
            .num("missing", report.iter().map(|r| r.missing as f64).collect())
            .num("missing_pct", report.iter().map(|r| (r.missing_pct * 100.0).round() / 100.0).collect())
            .text("method", report.iter().map(|r| r.method.as_str().to_string()).collect())
            .frame()?,
    )?;

    let single = complete_gcs_total(&impute_single(&frame, &policies)?)?;
    // Held-out outcomes are hidden from the chained equations.
    let masked_y = y.iter().zip(&train).map(|(&v, &t)| t.then_some(v)).collect();
    let mice_input = single.with_column(Column::numeric_opt(OUTCOME, masked_y))?;
    let completed = mice_impute(&mice_input, &cfg.mice)?;
    for (k, f) in completed.into_iter().enumerate() {
        let f = f.with_column(Column::numeric(OUTCOME, y.clone()))?;
        ctx.write(&files::imputed(k + 1), &f)?;
    }
    Ok(())
}

// ---- text -----------------------------------------------------------------

fn stage_text(ctx: &mut Ctx) -> Result<()> {
    let cohort = ctx.read(files::COHORT, Stage::Cohort)?;
    let discharge = ctx.input("discharge")?;
    let radiology = ctx.input("radiology")?;
    let d_emb = ctx.optional_input("discharge_emb")?;
    let r_emb = ctx.optional_input("radiology_emb")?;
    let src = TextSources { discharge: &discharge, radiology: &radiology, discharge_emb: d_emb.as_ref(), radiology_emb: r_emb.as_ref() };
    let (features, report) = build_text_features(&cohort, &src, &ctx.cfg.text)?;
    ctx.write(files::TEXT, &features)?;

    let cov = &report.coverage;
    ctx.write(
        files::TEXT_COVERAGE,
        &Table::default()
            .text("kind", cov.iter().map(|c| c.kind.as_str().to_string()).collect())
            .num("notes", cov.iter().map(|c| c.notes as f64).collect())
            .num("admissions", cov.iter().map(|c| c.admissions as f64).collect())
            .num("coverage_pct", cov.iter().map(|c| (1e4 * c.notes as f64 / c.admissions.max(1) as f64).round() / 100.0).collect())
            .frame()?,
    )?;
    ctx.write(
        files::TEXT_BLOCKS,
        &Table::default()
            .text("block", report.bases.iter().map(|(p, _)| p.clone()).collect())
            .text("method", report.bases.iter().map(|(_, b)| format!("{:?}", b.kind).to_lowercase()).collect())
            .num("input_dim", report.bases.iter().map(|(_, b)| b.components.ncols() as f64).collect())
            .num("retained", report.bases.iter().map(|(_, b)| b.retained as f64).collect())
            .num("cumulative_ratio", report.bases.iter().map(|(_, b)| b.cumulative_ratio()).collect())
            .frame()?,
    )?;
    for (prefix, basis) in &report.bases {
        let (k, p) = basis.components.shape();
        let mut rows: Vec<(String, f64, f64, f64, Vec<f64>)> = Vec::new();
        if let Some(c) = &basis.center {
            rows.push(("center".into(), f64::NAN, f64::NAN, f64::NAN, c.iter().copied().collect()));
        }
        for i in 0..k {
            rows.push((
                "component".into(),
                i as f64,
                basis.explained_ratio[i],
                basis.singular_values[i],
                basis.components.row(i).iter().copied().collect(),
            ));
        }
        let mut t = Table::default()
            .text("row", rows.iter().map(|r| r.0.clone()).collect())
            .num("index", rows.iter().map(|r| r.1).collect())
            .num("explained_ratio", rows.iter().map(|r| r.2).collect())
            .num("singular_value", rows.iter().map(|r| r.3).collect());
        for j in 0..p {
            t = t.num(&format!("f{j}"), rows.iter().map(|r| r.4[j]).collect());
        }
        ctx.write(&format!("{}.basis.csv", prefix.trim_end_matches('_')), &t.frame()?)?;
    }
    for model in &report.tfidf {
        ctx.write(
            &format!("{}_tfidf.vocab.csv", model.kind.as_str()),
            &Table::default()
                .text("term", model.vocabulary.clone())
                .num("df", model.df.iter().map(|&d| d as f64).collect())
                .num("idf", model.idf.clone())
                .frame()?,
        )?;
    }
    Ok(())
}

// ---- shared design assembly -------------------------------------------------

struct Design {
    frame: PatientFrame,
    y: Vec<f64>,
    stay_ids: Vec<f64>,
    train: Vec<usize>,
    valid: Vec<usize>,
    text_columns: Vec<String>,
}

fn load_design(ctx: &Ctx, k: usize) -> Result<Design> {
    let mut frame = ctx.read(&files::imputed(k), Stage::Impute)?;
    let split = ctx.read(files::SPLIT, Stage::Impute)?;
    let text = ctx.read(files::TEXT, Stage::Text)?;

    let set_of: BTreeMap<i64, bool> = split
        .numeric(STAY_ID)?
        .iter()
        .zip(split.text("set")?)
        .map(|(&s, set)| (s as i64, set == "train"))
        .collect();
    let stay_ids = frame.numeric(STAY_ID)?.to_vec();
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (i, s) in stay_ids.iter().enumerate() {
        match set_of.get(&(*s as i64)) {
            Some(true) => train.push(i),
            Some(false) => valid.push(i),
            None => return Err(PipelineError::Data(format!("stay {s} missing from the split"))),
        }
    }

    let text_row: BTreeMap<i64, usize> =
        text.numeric(HADM_ID)?.iter().enumerate().map(|(r, &h)| (h as i64, r)).collect();
    let hadm = frame.numeric(HADM_ID)?.to_vec();
    let rows: Vec<usize> = hadm
        .iter()
        .map(|h| text_row.get(&(*h as i64)).copied().ok_or_else(|| PipelineError::Data(format!("admission {h} has no text row"))))
        .collect::<Result<_>>()?;
    let mut text_columns = Vec::new();
    for col in text.columns() {
        if col.name == HADM_ID {
            continue;
        }
        let vals = col.as_numeric().ok_or_else(|| FrameError::NonNumericColumn(col.name.clone()))?;
        frame = frame.with_column(Column::numeric(col.name.clone(), rows.iter().map(|&r| vals[r]).collect()))?;
        text_columns.push(col.name.clone());
    }
    let y = frame.numeric(OUTCOME)?.to_vec();
    Ok(Design { frame, y, stay_ids, train, valid, text_columns })
}

fn structured_candidates(frame: &PatientFrame, include_extremes: bool) -> Vec<String> {
    let mut out = Vec::new();
    let mut push = |name: &str| {
        if frame.has_column(name) {
            out.push(name.to_string());
        }
    };
    push("anchor_age");
    for v in VITALS.iter().chain(LABS.iter()) {
        push(v);
        if include_extremes {
            push(&format!("{v}_min"));
            push(&format!("{v}_max"));
        }
    }
    push(GCS_TOTAL);
    for f in COMORBIDITY_FLAGS.iter().chain(TREATMENT_FLAGS.iter()) {
        push(f);
    }
    out
}

fn candidates(design: &Design, set: &str, include_extremes: bool) -> Vec<String> {
    let mut c = structured_candidates(&design.frame, include_extremes);
    if set == "structured_text" {
        c.extend(design.text_columns.iter().cloned());
    }
    c
}

/// NEWS2 from the six physiological aggregates; temperature is stored in °F.
/// Values are clamped into the chart's accepted ranges first.
fn news2_column(frame: &PatientFrame) -> Result<Vec<f64>> {
    let get = |n: &str| frame.numeric(n).map(<[f64]>::to_vec);
    let (rr, spo2, sbp, hr, bt, gcs) = (get("RR")?, get("SpO2")?, get("SBP")?, get("HR")?, get("BT")?, get(GCS_TOTAL)?);
    let mut clamped = 0usize;
    let mut clamp = |v: f64, lo: f64, hi: f64| {
        let c = v.clamp(lo, hi);
        if c != v {
            clamped += 1;
        }
        c
    };
    let mut out = Vec::with_capacity(rr.len());
    for i in 0..rr.len() {
        let input = News2Input {
            rr: clamp(rr[i], 0.0, 100.0),
            spo2: clamp(spo2[i], 0.0, 100.0),
            sbp: clamp(sbp[i], 0.0, 400.0),
            hr: clamp(hr[i], 0.0, 400.0),
            bt: clamp(fahrenheit_to_celsius(bt[i]), 20.0, 46.0),
            gcs_total: clamp(gcs[i], 3.0, 15.0),
        };
        out.push(f64::from(news2_score(&input)?));
    }
    if clamped > 0 {
        log::warn!("{clamped} NEWS2 inputs clamped into chart ranges");
    }
    Ok(out)
}

fn design_matrix(frame: &PatientFrame, names: &[String]) -> Result<FeatureMatrix> {
    if names.iter().any(|n| n == NEWS2_FEATURE) {
        let f = frame.clone().with_column(Column::numeric(NEWS2_FEATURE, news2_column(frame)?))?;
        return Ok(FeatureMatrix::from_frame(&f, names)?);
    }
    Ok(FeatureMatrix::from_frame(frame, names)?)
}

fn standardize(x: &FeatureMatrix, center: &[f64], scale: &[f64]) -> FeatureMatrix {
    let mut out = x.clone();
    for j in 0..x.ncols() {
        for v in out.data.column_mut(j).iter_mut() {
            *v = (*v - center[j]) / scale[j];
        }
    }
    out
}

fn subset(v: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&r| v[r]).collect()
}

// ---- select ---------------------------------------------------------------

fn stage_select(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let design = load_design(ctx, 1)?;
    let y_train = subset(&design.y, &design.train);
    let ids_train: Vec<u64> = design.train.iter().map(|&r| design.stay_ids[r] as u64).collect();
    let mut sel_rows: Vec<(String, String, String)> = Vec::new();

    for (set, label) in FEATURE_SETS {
        let names = candidates(&design, set, cfg.select.include_extremes);
        let raw = design_matrix(&design.frame, &names)?.select_rows(&design.train);
        let st = Standardizer::fit(&raw, &(0..raw.nrows()).collect::<Vec<_>>());
        let x = st.apply(&raw);

        // LASSO path with cross-validated deviance
        let t0 = std::time::Instant::now();
        let curve = cv_deviance(&x.data, &y_train, &ids_train, &cfg.lasso)?;
        log::debug!("{set}: lasso cv over {} features in {:.1?}", x.ncols(), t0.elapsed());
        let (fit, lasso_set) = refit_selected(&x, &y_train, curve.lambda_selected, &cfg.lasso.cd)?;
        ctx.write(
            &format!("cv_curve_{set}.csv"),
            &Table::default()
                .num("lambda", curve.lambda_grid.clone())
                .num("mean_deviance", curve.mean_deviance.clone())
                .num("se_deviance", curve.se_deviance.clone())
                .frame()?,
        )?;
        let mut plot = LinePlot::new(&format!("LASSO cross-validation ({label})"), "lambda (log scale)", "binomial deviance");
        plot.log_x = true;
        let pts = |f: &dyn Fn(usize) -> f64| curve.lambda_grid.iter().enumerate().map(|(i, &l)| (l, f(i))).collect();
        plot.series.push(Series::new("mean deviance", pts(&|i| curve.mean_deviance[i])));
        plot.series.push(Series::new("+1 SE", pts(&|i| curve.mean_deviance[i] + curve.se_deviance[i])).dashed());
        plot.series.push(Series::new("-1 SE", pts(&|i| curve.mean_deviance[i] - curve.se_deviance[i])).dashed());
        plot.vlines.push((curve.lambda_min, "min".into()));
        plot.vlines.push((curve.lambda_1se, "1se".into()));
        ctx.write_text(&format!("cv_curve_{set}.svg"), &plot.render())?;
        let nz: Vec<usize> = (0..fit.coef.len()).filter(|&j| fit.coef[j] != 0.0).collect();
        ctx.write(
            &format!("lasso_selected_{set}.csv"),
            &Table::default()
                .text("feature", nz.iter().map(|&j| x.names[j].clone()).collect())
                .num("coef", nz.iter().map(|&j| fit.coef[j]).collect())
                .num("lambda", vec![curve.lambda_selected; nz.len()])
                .frame()?,
        )?;

        // boosted trees
        let t0 = std::time::Instant::now();
        let model = fit_gbt(&x.data, &y_train, &cfg.gbt)?;
        log::debug!("{set}: boosted trees in {:.1?}", t0.elapsed());
        let ranked = gain_importance(&model);
        let k = if set == "structured" { cfg.select.top_k_structured } else { cfg.select.top_k_text };
        let gbt_set: Vec<String> = ranked.iter().take(k).map(|&(j, _)| x.names[j].clone()).collect();
        ctx.write(
            &format!("gbt_importance_{set}.csv"),
            &Table::default()
                .num("rank", (1..=ranked.len()).map(|r| r as f64).collect())
                .text("feature", ranked.iter().map(|&(j, _)| x.names[j].clone()).collect())
                .num("gain", ranked.iter().map(|&(_, g)| g).collect())
                .text("selected", ranked.iter().enumerate().map(|(r, _)| (r < k).to_string()).collect())
                .frame()?,
        )?;
        ctx.write_text(&format!("gbt_model_{set}.txt"), &model.to_text())?;

        // univariate screen on the raw scale, then collinearity per model
        let combined = consolidate_features(&lasso_set, &gbt_set);
        let raw_c = raw.select_columns(&combined).expect("candidate names");
        let t0 = std::time::Instant::now();
        let screen = univariate_screen(&raw_c, &y_train, cfg.select.alpha);
        log::debug!("{set}: univariate screen in {:.1?}", t0.elapsed());
        ctx.write(
            &format!("univariate_report_{set}.csv"),
            &Table::default()
                .text("variable", screen.iter().map(|r| r.variable.clone()).collect())
                .num("coef", screen.iter().map(|r| r.coef).collect())
                .num("p", screen.iter().map(|r| r.p).collect())
                .text("significant", screen.iter().map(|r| r.significant.to_string()).collect())
                .text("source", screen.iter().map(|r| source_of(&r.variable, &lasso_set, &gbt_set).to_string()).collect())
                .text("reason", screen.iter().map(|r| r.reason.clone().unwrap_or_default()).collect())
                .frame()?,
        )?;
        let significant: Vec<&str> = screen.iter().filter(|r| r.significant).map(|r| r.variable.as_str()).collect();
        let mut vif_rows: Vec<[String; 6]> = Vec::new();
        for (model_name, pool) in [("LASSO", &lasso_set), ("GBT", &gbt_set), ("Combined", &combined)] {
            let keep: Vec<String> = pool.iter().filter(|n| significant.contains(&n.as_str())).cloned().collect();
            let kept = if keep.len() >= 2 {
                let rep = resolve_collinearity(&x.select_columns(&keep).expect("candidate names"), &cfg.vif);
                let fin: BTreeMap<&str, f64> = rep.final_vifs.iter().map(|(n, v)| (n.as_str(), *v)).collect();
                for (name, v0) in &rep.initial {
                    let drop = rep.drop_sequence.iter().find(|d| &d.dropped == name);
                    vif_rows.push([
                        model_name.to_string(),
                        name.clone(),
                        fmt_num(*v0),
                        fin.get(name.as_str()).map_or_else(String::new, |v| fmt_num(*v)),
                        drop.and_then(|d| d.kept_instead.clone()).unwrap_or_default(),
                        drop.map(|d| d.reason.clone()).unwrap_or_default(),
                    ]);
                }
                rep.kept
            } else {
                keep
            };
            if kept.is_empty() {
                log::warn!("{model_name} ({set}) kept no features; fitting intercept only");
                sel_rows.push((set.into(), model_name.into(), String::new()));
            }
            sel_rows.extend(kept.into_iter().map(|f| (set.to_string(), model_name.to_string(), f)));
        }
        let col = |i: usize| vif_rows.iter().map(|r| r[i].clone()).collect::<Vec<_>>();
        ctx.write(
            &format!("vif_report_{set}.csv"),
            &Table::default()
                .text("model", col(0))
                .text("variable", col(1))
                .text("vif_initial", col(2))
                .text("vif_final", col(3))
                .text("kept_instead", col(4))
                .text("drop_reason", col(5))
                .frame()?,
        )?;
        sel_rows.push((set.into(), NEWS2_MODEL.into(), NEWS2_FEATURE.into()));
    }
    ctx.write(
        files::SELECTION,
        &Table::default()
            .text("set", sel_rows.iter().map(|r| r.0.clone()).collect())
            .text("model", sel_rows.iter().map(|r| r.1.clone()).collect())
            .text("feature", sel_rows.iter().map(|r| r.2.clone()).collect())
            .frame()?,
    )?;
    Ok(())
}

fn source_of(name: &str, lasso: &[String], gbt: &[String]) -> &'static str {
    match (lasso.iter().any(|n| n == name), gbt.iter().any(|n| n == name)) {
        (true, true) => "both",
        (true, false) => "lasso",
        _ => "gbt",
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        crate::frame::format_number(v)
    }
}

/// `(set, model) -> features` in selection order.
fn read_selection(ctx: &Ctx) -> Result<Vec<((String, String), Vec<String>)>> {
    let sel = ctx.read(files::SELECTION, Stage::Select)?;
    let (sets, models) = (sel.text("set")?, sel.text("model")?);
    let feature = sel.column("feature")?;
    let mut out: Vec<((String, String), Vec<String>)> = Vec::new();
    for r in 0..sel.n_rows() {
        let key = (sets[r].clone(), models[r].clone());
        let f = feature.as_text().and_then(|t| (!feature.missing[r]).then(|| t[r].clone()));
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.extend(f),
            None => out.push((key, f.into_iter().collect())),
        }
    }
    Ok(out)
}

// ---- fit ------------------------------------------------------------------

fn stage_fit(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let selection = read_selection(ctx)?;
    let designs: Vec<Design> = (1..=cfg.mice.m).map(|k| load_design(ctx, k)).collect::<Result<_>>()?;
    let base = &designs[0];
    let y_train = subset(&base.y, &base.train);

    let mut summary: Vec<(String, String, String, [f64; 13])> = Vec::new();
    let mut fit_rows: Vec<(String, String, usize, f64, bool)> = Vec::new();
    for ((set, model), features) in &selection {
        let x1 = design_matrix(&base.frame, features)?.select_rows(&base.train);
        let st = Standardizer::fit(&x1, &(0..x1.nrows()).collect::<Vec<_>>());
        let mut fits: Vec<GlmFit> = Vec::with_capacity(designs.len());
        for d in &designs {
            let x = standardize(&design_matrix(&d.frame, features)?.select_rows(&d.train), &st.mean, &st.scale);
            let fit = match fit_logistic(&x, &y_train) {
                Ok(f) => f,
                Err(GlmError::Separation { fit }) => {
                    log::warn!("{model} ({set}): separation detected; keeping the non-converged fit");
                    *fit
                }
                Err(e) => return Err(e.into()),
            };
            fits.push(fit);
        }
        let pooled = rubin_pool(&fits, fits.len())?;
        let converged = fits.iter().all(|f| f.converged);
        fit_rows.push((set.clone(), model.clone(), features.len(), pooled.mean_pseudo_r2(), converged));
        // raw-scale intercept: β0 − Σ βj·centerj/scalej
        let mut raw_intercept = pooled.beta_mi[0];
        for j in 0..features.len() {
            raw_intercept -= pooled.beta_mi[j + 1] * st.mean[j] / st.scale[j];
        }
        for (i, name) in pooled.names.iter().enumerate() {
            let (center, scale) = if i == 0 { (0.0, 1.0) } else { (st.mean[i - 1], st.scale[i - 1]) };
            let coef_raw = if i == 0 { raw_intercept } else { pooled.beta_mi[i] / scale };
            summary.push((
                set.clone(),
                model.clone(),
                name.clone(),
                [
                    pooled.beta_mi[i],
                    pooled.se[i],
                    pooled.z[i],
                    pooled.p[i],
                    pooled.ci_low[i],
                    pooled.ci_high[i],
                    pooled.within_var[i],
                    pooled.between_var[i],
                    pooled.total_var[i],
                    center,
                    scale,
                    coef_raw,
                    pooled.mean_pseudo_r2(),
                ],
            ));
        }
    }
    const NUM: [&str; 13] = [
        "coef", "se", "z", "p", "ci_low", "ci_high", "within_var", "between_var", "total_var", "center", "scale", "coef_raw", "pseudo_r2",
    ];
    let mut t = Table::default()
        .text("set", summary.iter().map(|r| r.0.clone()).collect())
        .text("model", summary.iter().map(|r| r.1.clone()).collect())
        .text("variable", summary.iter().map(|r| r.2.clone()).collect());
    for (j, name) in NUM.iter().enumerate() {
        t = t.num(name, summary.iter().map(|r| r.3[j]).collect());
    }
    ctx.write(files::MODEL_SUMMARY, &t.frame()?)?;
    ctx.write(
        files::MODEL_FIT,
        &Table::default()
            .text("set", fit_rows.iter().map(|r| r.0.clone()).collect())
            .text("model", fit_rows.iter().map(|r| r.1.clone()).collect())
            .num("n_features", fit_rows.iter().map(|r| r.2 as f64).collect())
            .num("pseudo_r2", fit_rows.iter().map(|r| r.3).collect())
            .num("imputations", vec![cfg.mice.m as f64; fit_rows.len()])
            .text("converged", fit_rows.iter().map(|r| r.4.to_string()).collect())
            .frame()?,
    )?;
    Ok(())
}

// ---- evaluate -------------------------------------------------------------

struct PooledModel {
    set: String,
    model: String,
    features: Vec<String>,
    intercept: f64,
    coef: Vec<f64>,
    center: Vec<f64>,
    scale: Vec<f64>,
}

fn read_models(ctx: &Ctx) -> Result<Vec<PooledModel>> {
    let s = ctx.read(files::MODEL_SUMMARY, Stage::Fit)?;
    let (sets, models, vars) = (s.text("set")?, s.text("model")?, s.text("variable")?);
    let (coef, center, scale) = (s.numeric("coef")?, s.numeric("center")?, s.numeric("scale")?);
    let mut out: Vec<PooledModel> = Vec::new();
    for r in 0..s.n_rows() {
        if vars[r] == INTERCEPT {
            out.push(PooledModel {
                set: sets[r].clone(),
                model: models[r].clone(),
                features: vec![],
                intercept: coef[r],
                coef: vec![],
                center: vec![],
                scale: vec![],
            });
            continue;
        }
        let m = out.last_mut().ok_or_else(|| PipelineError::Data("model summary rows out of order".into()))?;
        m.features.push(vars[r].clone());
        m.coef.push(coef[r]);
        m.center.push(center[r]);
        m.scale.push(scale[r]);
    }
    Ok(out)
}

fn model_label(set: &str, model: &str) -> String {
    format!("{set}:{model}")
}

fn stage_evaluate(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let models = read_models(ctx)?;
    let designs: Vec<Design> = (1..=cfg.mice.m).map(|k| load_design(ctx, k)).collect::<Result<_>>()?;
    let base = &designs[0];
    let valid = &base.valid;
    let y = subset(&base.y, valid);
    let m = designs.len() as f64;

    // pooled coefficients applied to every completed dataset; probabilities averaged
    let mut preds: Vec<(String, String, Vec<f64>)> = Vec::new();
    for pm in &models {
        let mut p = vec![0.0; valid.len()];
        for d in &designs {
            let x = standardize(&design_matrix(&d.frame, &pm.features)?.select_rows(valid), &pm.center, &pm.scale);
            for (i, pi) in p.iter_mut().enumerate() {
                let eta = pm.intercept + (0..pm.coef.len()).map(|j| pm.coef[j] * x.data[(i, j)]).sum::<f64>();
                *pi += sigmoid(eta) / m;
            }
        }
        preds.push((pm.set.clone(), pm.model.clone(), p));
    }
    let mut raw = vec![0.0; valid.len()];
    for d in &designs {
        let score = news2_column(&d.frame.select_rows(valid))?;
        for (r, s) in raw.iter_mut().zip(score) {
            *r += s / m;
        }
    }

    let mut pt = Table::default()
        .num(STAY_ID, subset(&base.stay_ids, valid))
        .num(SUBJECT_ID, subset(base.frame.numeric(SUBJECT_ID)?, valid))
        .num(OUTCOME, y.clone());
    for (set, model, p) in &preds {
        pt = pt.num(&model_label(set, model), p.clone());
    }
    pt = pt.num(NEWS2_RAW, raw.clone());
    ctx.write(files::PREDICTIONS, &pt.frame()?)?;

    let grid = dca_grid();
    let mut roc_rows: Vec<(String, String, f64, f64, f64)> = Vec::new();
    let mut cal_rows: Vec<(String, String, usize, [f64; 5])> = Vec::new();
    let mut dca_rows: Vec<(String, String, f64, f64, f64)> = Vec::new();
    let mut metric_rows: Vec<(String, String, [f64; 5])> = Vec::new();
    let mut plots: BTreeMap<String, [LinePlot; 3]> = BTreeMap::new();
    for (set, label) in FEATURE_SETS {
        plots.insert(
            set.to_string(),
            [
                LinePlot::new(&format!("ROC, validation ({label})"), "false positive rate", "true positive rate"),
                LinePlot::new(&format!("Calibration, validation ({label})"), "mean predicted probability", "observed event rate"),
                LinePlot::new(&format!("Decision curves, validation ({label})"), "threshold probability", "standardized net benefit"),
            ],
        );
    }
    let mut evaluated: Vec<(String, String, &[f64], bool)> =
        preds.iter().map(|(s, m, p)| (s.clone(), m.clone(), p.as_slice(), true)).collect();
    for (set, _) in FEATURE_SETS {
        evaluated.push((set.to_string(), NEWS2_RAW.to_string(), raw.as_slice(), false));
    }
    for (set, model, p, is_prob) in evaluated {
        let curve = roc(p, &y)?;
        for i in 0..curve.tpr.len() {
            roc_rows.push((set.clone(), model.clone(), curve.thresholds[i], curve.fpr[i], curve.tpr[i]));
        }
        let plot = plots.get_mut(&set).expect("known set");
        plot[0].series.push(Series::new(
            format!("{model} (AUC {:.3})", curve.auc),
            curve.fpr.iter().copied().zip(curve.tpr.iter().copied()).collect(),
        ));
        if !is_prob {
            metric_rows.push((set, model, [curve.auc, f64::NAN, f64::NAN, f64::NAN, f64::NAN]));
            continue;
        }
        let cal = calibration(p, &y, cfg.eval.calibration_bins)?;
        for b in 0..cal.counts.len() {
            cal_rows.push((
                set.clone(),
                model.clone(),
                b,
                [cal.edges[b].0, cal.edges[b].1, cal.counts[b] as f64, cal.mean_predicted[b], cal.observed_rate[b]],
            ));
        }
        plot[1].series.push(Series::new(model.clone(), cal.mean_predicted.iter().copied().zip(cal.observed_rate.iter().copied()).collect()));
        let dca = decision_curve(p, &y, &grid)?;
        for (i, &t) in dca.thresholds.iter().enumerate() {
            dca_rows.push((set.clone(), model.clone(), t, dca.net_benefit[i], dca.standardized_net_benefit[i]));
        }
        plot[2].series.push(Series::new(model.clone(), grid.iter().copied().zip(dca.standardized_net_benefit.iter().copied()).collect()));
        if model == NEWS2_MODEL || plot[2].series.iter().all(|s| s.name != "Treat all") {
            // reference strategies once per set
            if !dca_rows.iter().any(|r| r.0 == set && r.1 == "Treat all") {
                for (i, &t) in grid.iter().enumerate() {
                    dca_rows.push((set.clone(), "Treat all".into(), t, dca.nb_treat_all[i], dca.snb_treat_all[i]));
                    dca_rows.push((set.clone(), "Treat none".into(), t, 0.0, 0.0));
                }
            }
        }
        let tm = threshold_metrics(p, &y, cfg.eval.threshold)?;
        metric_rows.push((set, model, [curve.auc, tm.accuracy, tm.precision_pos, tm.recall_pos, tm.f1_pos]));
    }

    let strs = |f: &dyn Fn(usize) -> String, n: usize| (0..n).map(f).collect::<Vec<_>>();
    ctx.write(
        files::ROC,
        &Table::default()
            .text("set", strs(&|i| roc_rows[i].0.clone(), roc_rows.len()))
            .text("model", strs(&|i| roc_rows[i].1.clone(), roc_rows.len()))
            .text("threshold", strs(&|i| fmt_num(roc_rows[i].2), roc_rows.len()))
            .num("fpr", roc_rows.iter().map(|r| r.3).collect())
            .num("tpr", roc_rows.iter().map(|r| r.4).collect())
            .frame()?,
    )?;
    let mut t = Table::default()
        .text("set", cal_rows.iter().map(|r| r.0.clone()).collect())
        .text("model", cal_rows.iter().map(|r| r.1.clone()).collect())
        .num("bin", cal_rows.iter().map(|r| r.2 as f64).collect());
    for (j, name) in ["prob_low", "prob_high", "count", "mean_predicted", "observed_rate"].iter().enumerate() {
        t = t.num(name, cal_rows.iter().map(|r| r.3[j]).collect());
    }
    ctx.write(files::CALIBRATION, &t.frame()?)?;
    ctx.write(
        files::DCA,
        &Table::default()
            .text("set", dca_rows.iter().map(|r| r.0.clone()).collect())
            .text("model", dca_rows.iter().map(|r| r.1.clone()).collect())
            .num("threshold", dca_rows.iter().map(|r| r.2).collect())
            .num("net_benefit", dca_rows.iter().map(|r| r.3).collect())
            .num("standardized_net_benefit", dca_rows.iter().map(|r| r.4).collect())
            .frame()?,
    )?;
    let prevalence = y.iter().sum::<f64>() / y.len() as f64;
    let mut t = Table::default()
        .text("set", metric_rows.iter().map(|r| r.0.clone()).collect())
        .text("model", metric_rows.iter().map(|r| r.1.clone()).collect());
    for (j, name) in ["auc", "accuracy", "precision", "recall", "f1"].iter().enumerate() {
        t = t.num(name, metric_rows.iter().map(|r| r.2[j]).collect());
    }
    t = t
        .num("threshold", vec![cfg.eval.threshold; metric_rows.len()])
        .num("n_valid", vec![y.len() as f64; metric_rows.len()])
        .num("prevalence", vec![prevalence; metric_rows.len()]);
    ctx.write(files::METRICS, &t.frame()?)?;

    for (set, [mut roc_plot, mut cal_plot, mut dca_plot]) in plots {
        roc_plot.series.push(Series::new("chance", vec![(0.0, 0.0), (1.0, 1.0)]).dashed());
        roc_plot.x_range = Some((0.0, 1.0));
        roc_plot.y_range = Some((0.0, 1.0));
        cal_plot.series.push(Series::new("ideal", vec![(0.0, 0.0), (1.0, 1.0)]).dashed());
        cal_plot.x_range = Some((0.0, 1.0));
        cal_plot.y_range = Some((0.0, 1.0));
        if let Some(rows) = Some(dca_rows.iter().filter(|r| r.0 == set && r.1 == "Treat all").collect::<Vec<_>>()) {
            dca_plot.series.push(Series::new("Treat all", rows.iter().map(|r| (r.2, r.4)).collect()).dashed());
        }
        dca_plot.series.push(Series::new("Treat none", vec![(0.01, 0.0), (0.99, 0.0)]).dashed());
        dca_plot.x_range = Some((0.0, 1.0));
        dca_plot.y_range = Some((-0.2, 1.05));
        ctx.write_text(&format!("roc_{set}.svg"), &roc_plot.render())?;
        ctx.write_text(&format!("calibration_{set}.svg"), &cal_plot.render())?;
        ctx.write_text(&format!("dca_{set}.svg"), &dca_plot.render())?;
    }
    Ok(())
}

// ---- report ---------------------------------------------------------------

fn stage_report(ctx: &mut Ctx) -> Result<()> {
    let fit = ctx.read(files::MODEL_FIT, Stage::Fit)?;
    let metrics = ctx.read(files::METRICS, Stage::Evaluate)?;
    let (fs, fm, nf, r2) = (fit.text("set")?, fit.text("model")?, fit.numeric("n_features")?, fit.numeric("pseudo_r2")?);

    // pseudo-R² comparison: {LASSO, GBT, Combined} × feature source
    let mut r2_rows: Vec<(String, String, f64, f64)> = Vec::new();
    for (set, label) in FEATURE_SETS {
        for model in SELECTED_MODELS {
            if let Some(r) = (0..fit.n_rows()).find(|&r| fs[r] == set && fm[r] == model) {
                r2_rows.push((model.to_string(), label.to_string(), nf[r], r2[r]));
            }
        }
    }
    ctx.write(
        files::REPORT_PSEUDO_R2,
        &Table::default()
            .text("model", r2_rows.iter().map(|r| r.0.clone()).collect())
            .text("feature_source", r2_rows.iter().map(|r| r.1.clone()).collect())
            .num("n_features", r2_rows.iter().map(|r| r.2).collect())
            .num("pseudo_r2", r2_rows.iter().map(|r| (r.3 * 1e4).round() / 1e4).collect())
            .frame()?,
    )?;

    // validation metrics of the best logistic model per feature source
    let (ms, mm) = (metrics.text("set")?, metrics.text("model")?);
    let col = |n: &str| metrics.numeric(n).map(<[f64]>::to_vec);
    let (auc, acc, f1, rec) = (col("auc")?, col("accuracy")?, col("f1")?, col("recall")?);
    let mut best: Vec<(usize, &str)> = Vec::new();
    for (set, _) in FEATURE_SETS {
        let r = (0..metrics.n_rows())
            .filter(|&r| ms[r] == set && SELECTED_MODELS.contains(&mm[r].as_str()))
            .max_by(|&a, &b| auc[a].total_cmp(&auc[b]).then(b.cmp(&a)))
            .ok_or_else(|| PipelineError::Data(format!("no evaluated models for {set}")))?;
        best.push((r, set));
    }
    let names = ["AUC", "Accuracy", "F1-score (Class 1)", "Recall (Class 1)"];
    let values = [&auc, &acc, &f1, &rec];
    let round = |v: f64| (v * 1e4).round() / 1e4;
    ctx.write(
        files::REPORT_METRICS,
        &Table::default()
            .text("metric", strings(names))
            .num("structured_only", values.iter().map(|v| round(v[best[0].0])).collect())
            .num("structured_text", values.iter().map(|v| round(v[best[1].0])).collect())
            .frame()?,
    )?;

    let mut md = String::from("# Model comparison\n\n## Logistic models by feature source\n\n");
    md.push_str("| Model | Feature Source | # Features | Pseudo-R² |\n|---|---|---:|---:|\n");
    for r in &r2_rows {
        md.push_str(&format!("| {} | {} | {} | {:.4} |\n", r.0, r.1, r.2, r.3));
    }
    md.push_str(&format!(
        "\n## Validation metrics\n\nBest model by AUC: {} (structured only), {} (structured + text).\n\n",
        mm[best[0].0], mm[best[1].0]
    ));
    md.push_str("| Metric | Structured Only | Structured + Text |\n|---|---:|---:|\n");
    for (n, v) in names.iter().zip(values) {
        md.push_str(&format!("| {n} | {:.4} | {:.4} |\n", v[best[0].0], v[best[1].0]));
    }
    md.push_str("\n## All evaluated models\n\n| Set | Model | AUC | Accuracy | F1 | Recall |\n|---|---|---:|---:|---:|---:|\n");
    for r in 0..metrics.n_rows() {
        let f = |v: f64| if v.is_finite() { format!("{v:.4}") } else { "-".into() };
        md.push_str(&format!("| {} | {} | {} | {} | {} | {} |\n", ms[r], mm[r], f(auc[r]), f(acc[r]), f(f1[r]), f(rec[r])));
    }
    ctx.write_text(files::REPORT_MD, &md)?;
    Ok(())
}
