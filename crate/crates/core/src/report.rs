//! The treatment-effect report shared by every estimator.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Two-sided 95% normal quantile.
pub const Z_975: f64 = 1.959964;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NaiveLasso,
    Score,
    Hdi,
    ScoreCf,
    HdiCf,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::NaiveLasso,
        Method::Score,
        Method::Hdi,
        Method::ScoreCf,
        Method::HdiCf,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::NaiveLasso => "naive_lasso",
            Method::Score => "score",
            Method::Hdi => "hdi",
            Method::ScoreCf => "score_cf",
            Method::HdiCf => "hdi_cf",
        }
    }

    /// Parses `hdi_cf`, `hdi-cf` and friends.
    pub fn parse(s: &str) -> Option<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL.into_iter().find(|m| m.tag() == norm || (norm == "naive" && *m == Method::NaiveLasso))
    }

    pub fn is_crossfit(self) -> bool {
        matches!(self, Method::ScoreCf | Method::HdiCf)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Nuisance summary of one cross-fitting fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub lambda_beta: f64,
    pub lambda_gamma: f64,
    pub s_hat_beta: usize,
    pub s_hat_gamma: usize,
}

/// Point estimate, Wald interval and nuisance summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentEffectReport {
    pub method: Method,
    pub theta: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub n: usize,
    pub p: usize,
    pub lambda_beta: Option<f64>,
    pub lambda_gamma: Option<f64>,
    pub s_hat_beta: Option<usize>,
    pub s_hat_gamma: Option<usize>,
    pub ps_min: Option<f64>,
    pub ps_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_fold: Option<Vec<FoldSummary>>,
}

impl TreatmentEffectReport {
    /// Builds the Wald interval and two-sided p-value from `θ` and `se`.
    pub fn new(method: Method, theta: f64, se: f64, n: usize, p: usize) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::DegenerateDesign(format!("non-finite estimate {theta}")));
        }
        if !(se > 0.0 && se.is_finite()) {
            return Err(Error::ZeroDenominator(format!("standard error {se} is not positive")));
        }
        let half = Z_975 * se;
        let p_value = erfc((theta / se).abs() / std::f64::consts::SQRT_2);
        Ok(Self {
            method,
            theta,
            se,
            ci_low: theta - half,
            ci_high: theta + half,
            p_value,
            n,
            p,
            lambda_beta: None,
            lambda_gamma: None,
            s_hat_beta: None,
            s_hat_gamma: None,
            ps_min: None,
            ps_max: None,
            k: None,
            per_fold: None,
        })
    }

    pub fn covers(&self, theta0: f64) -> bool {
        self.ci_low <= theta0 && theta0 <= self.ci_high
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
