//! Interpretable multimodal mortality-risk pipeline.
//!
//! Cohort construction, physiological harmonization, tiered imputation with
//! pooled inference, text-feature reduction, dual feature selection (L1
//! logistic regression and boosted trees), logistic inference, NEWS2 scoring
//! and discrimination / calibration / decision-curve evaluation.

pub mod cohort;
pub mod config;
pub mod eval;
pub mod frame;
pub mod gbt;
pub mod glm;
pub mod harmonize;
pub mod impute;
pub mod io;
pub mod lasso;
pub mod linalg;
pub mod matrix;
pub mod pipeline;
pub mod seed;
pub mod svg;
pub mod synth;
pub mod text;

pub use frame::{Column, ColumnSpec, JoinKind, JoinSpec, PatientFrame};
pub use matrix::{FeatureMatrix, Provenance};
