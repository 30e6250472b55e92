//! The closed-form hazards difference (HDi) estimator.
//!
//! With balancing weights `w⁰ = (1 − D)π`, `w¹ = D(1 − π)`, the estimator is
//!
//! ```text
//! θ̌ = Σ_i w⁰_i ∫_0^τ (Y_i {β'(Z_i − Z̃(u)) du + dÑ(u)} − dN_i(u)) / Σ_i w⁰_i X_i
//! ```
//!
//! where `Z̃` and `Ñ` are the `w¹`-weighted at-risk covariate mean and event
//! rate. It also equals the difference of the two arm-weighted Breslow
//! estimators averaged over controls, and the root of the orthogonal score
//! with the arm-1 weighted Breslow estimator plugged in, which is linear in `θ`.
//!
//! `Z̃` and `Ñ` only exist while some treated subject with positive weight is
//! at risk. When that set empties before the last observed time, every form
//! is computed on the data truncated at the last time it is non-empty.

use crate::baseline::{propensities, weighted_breslow, BalanceWeights};
use crate::data::{RiskSetIndex, SurvivalDataset};
use crate::error::{Error, Result};
use crate::report::{Method, TreatmentEffectReport};
use crate::score::{evaluate_score, sandwich_sigma2, ScoreContext};

/// Numerator, denominator and horizon of one HDi evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdiParts {
    pub numerator: f64,
    pub denominator: f64,
    /// Upper limit of the integrals, at most `τ`.
    pub horizon: f64,
}

impl HdiParts {
    pub fn theta(&self) -> Result<f64> {
        if !(self.denominator > 0.0) {
            return Err(Error::ZeroDenominator(
                "Σ w⁰_i X_i = 0: no controls with positive propensity".into(),
            ));
        }
        Ok(self.numerator / self.denominator)
    }
}

/// Last observed time at which the `w¹`-weighted risk set is non-empty.
pub fn effective_horizon(index: &RiskSetIndex, w1: &[f64]) -> Result<f64> {
    let den = index.risk_sums(|i| w1[i]);
    match den.iter().rposition(|&d| d > 0.0) {
        Some(g) => Ok(index.distinct_times()[g]),
        None => Err(Error::NoOverlapInArm { arm: 1, time: 0.0 }),
    }
}

/// The data on which every HDi form is evaluated.
pub fn effective_data(data: &SurvivalDataset, index: &RiskSetIndex, weights: &BalanceWeights) -> Result<SurvivalDataset> {
    let s = effective_horizon(index, &weights.w1)?;
    let last = *index.distinct_times().last().expect("n >= 2");
    Ok(if s < last { data.truncate(s) } else { data.clone() })
}

/// Single pass over the distinct times.
pub fn hdi_parts(
    data: &SurvivalDataset,
    index: &RiskSetIndex,
    beta: &[f64],
    weights: &BalanceWeights,
) -> Result<HdiParts> {
    let (w0, w1) = (&weights.w0, &weights.w1);
    let s = effective_horizon(index, w1)?;
    let bz = data.linear_predictor(beta);
    let den1 = index.risk_sums(|i| w1[i]);
    let bz1 = index.risk_sums(|i| w1[i] * bz[i]);
    let ev1 = index.event_sums(data.events(), |i| w1[i]);
    let r0 = index.risk_sums(|i| w0[i]);
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for i in 0..data.n() {
        if w0[i] == 0.0 {
            continue;
        }
        let x = data.time(i).min(s);
        let dn = if data.events()[i] && data.time(i) <= s { 1.0 } else { 0.0 };
        numerator += w0[i] * (bz[i] * x - dn);
        denominator += w0[i] * x;
    }
    for (g, &u) in index.distinct_times().iter().enumerate() {
        if u > s {
            break;
        }
        if r0[g] == 0.0 {
            continue;
        }
        numerator += r0[g] * (ev1[g] - index.segment_length(g) * bz1[g]) / den1[g];
    }
    Ok(HdiParts {
        numerator,
        denominator,
        horizon: s,
    })
}

/// Closed-form variance inputs on `[0, horizon]`.
fn truncated_sigma2(data: &SurvivalDataset, ps: &[f64], theta: f64, s: f64) -> Result<f64> {
    let x: Vec<f64> = data.times().iter().map(|&t| t.min(s)).collect();
    let e: Vec<bool> = data
        .times()
        .iter()
        .zip(data.events())
        .map(|(&t, &d)| d && t <= s)
        .collect();
    sandwich_sigma2(&x, &e, data.treatments(), ps, theta)
}

/// The HDi estimate with its closed-form standard error.
pub fn hdi(
    data: &SurvivalDataset,
    index: &RiskSetIndex,
    beta: &[f64],
    gamma: &[f64],
) -> Result<TreatmentEffectReport> {
    let ps = propensities(data, gamma);
    let weights = BalanceWeights::from_propensities(data.treatments(), &ps);
    let parts = hdi_parts(data, index, beta, &weights)?;
    let theta = parts.theta()?;
    let sigma2 = truncated_sigma2(data, &ps, theta, parts.horizon)?;
    let mut report =
        TreatmentEffectReport::new(Method::Hdi, theta, (sigma2 / data.n() as f64).sqrt(), data.n(), data.p())?;
    report.ps_min = ps.iter().cloned().reduce(f64::min);
    report.ps_max = ps.iter().cloned().reduce(f64::max);
    Ok(report)
}

/// The contrast form: controls' weighted average of `d(Λ̌¹ − Λ̌⁰)`.
pub fn hdi_contrast(
    data: &SurvivalDataset,
    index: &RiskSetIndex,
    beta: &[f64],
    weights: &BalanceWeights,
) -> Result<f64> {
    let d = effective_data(data, index, weights)?;
    let idx = RiskSetIndex::new(&d);
    let l1 = weighted_breslow(&d, &idx, beta, weights, 1, false)?;
    let l0 = weighted_breslow(&d, &idx, beta, weights, 0, false)?;
    let r0 = idx.risk_sums(|i| weights.w0[i]);
    let mut num = 0.0;
    for g in 0..idx.n_groups() {
        let len = idx.segment_length(g);
        let d1 = l1.jumps()[g] + l1.drift_a()[g] * len;
        let d0 = l0.jumps()[g] + l0.drift_a()[g] * len;
        num += r0[g] * (d1 - d0);
    }
    let den: f64 = (0..d.n()).map(|i| weights.w0[i] * d.time(i)).sum();
    HdiParts {
        numerator: num,
        denominator: den,
        horizon: d.tau(),
    }
    .theta()
}

/// Root of the orthogonal score with the arm-1 weighted Breslow estimator
/// plugged in. The score is affine in `θ`; returns `(root, intercept, slope)`.
pub fn hdi_from_score(
    data: &SurvivalDataset,
    index: &RiskSetIndex,
    beta: &[f64],
    gamma: &[f64],
) -> Result<(f64, f64, f64)> {
    let weights = BalanceWeights::from_gamma(data, gamma);
    let d = effective_data(data, index, &weights)?;
    let idx = RiskSetIndex::new(&d);
    let baseline = weighted_breslow(&d, &idx, beta, &weights, 1, true)?;
    let ctx = ScoreContext::one_shot(&d, beta, gamma, baseline)?;
    let h = 1.0 / d.tau();
    let f0 = evaluate_score(&ctx, 0.0)?;
    let f1 = evaluate_score(&ctx, h)?;
    let slope = (f1 - f0) / h;
    if slope == 0.0 {
        return Err(Error::ZeroSlope);
    }
    Ok((-f0 / slope, f0, slope))
}
