//! Baseline scoring and model evaluation: NEWS2, ROC/AUC, calibration bins,
//! decision curves and threshold metrics.

mod curves;
mod news2;

pub use curves::{
    calibration, decision_curve, dca_grid, roc, threshold_metrics, CalibrationBins, DcaCurve, RocCurve,
    ThresholdMetrics,
};
pub use news2::{news2_score, News2Input, ScoreBand, NEWS2_CHART};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("`{param}` = {value} outside the accepted range")]
    OutOfRange { param: &'static str, value: f64 },
    #[error("outcome has a single class")]
    SingleClass,
    #[error("{rows} rows cannot fill {bins} bins")]
    TooFewRows { rows: usize, bins: usize },
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("probabilities must lie in [0, 1]")]
    NotProbability,
}
