//! Treatment effects on censored survival outcomes under the additive
//! hazards model `λ(t | D, Z) = λ₀(t) + Dθ + β'Z` with many covariates.
//!
//! The crate provides the L1-penalized nuisance fits (additive hazards and
//! logistic propensity), Breslow-type baseline estimators, the orthogonal
//! score estimator, the closed-form hazards difference (HDi) estimator, their
//! cross-fitted versions, nuisance diagnostics and a simulation harness.

pub mod ahaz;
pub mod baseline;
pub mod crossfit;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod folds;
pub mod hdi;
pub mod lasso;
pub mod logit;
pub mod pipeline;
pub mod report;
pub mod score;
pub mod sim;

pub use data::{load_csv, read_csv, RiskSetIndex, StepFunction, SurvivalDataset};
pub use error::{Error, Result};
pub use folds::FoldPlan;
pub use report::{FoldSummary, Method, TreatmentEffectReport};
