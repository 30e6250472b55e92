//! Nuisance fitting and the end-to-end estimators on one dataset.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ahaz::{self, AhazCvConfig, AhazLassoFit, AhazQuadratic};
use crate::baseline::breslow;
use crate::crossfit::{self, FoldNuisance};
use crate::data::{RiskSetIndex, SurvivalDataset};
use crate::error::{Error, Result};
use crate::folds::FoldPlan;
use crate::hdi;
use crate::lasso::Gram;
use crate::logit::{select_lambda_cv_logit, LogitCvConfig};
use crate::report::{Method, TreatmentEffectReport};
use crate::score::{solve_theta, ScoreContext};

/// Tuning shared by every estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Cross-fitting folds.
    pub k: usize,
    /// Penalty-selection folds for the one-shot estimators.
    pub cv_folds: usize,
    /// Penalty-selection folds inside each cross-fitting fold; `k − 1` when unset.
    pub inner_cv_folds: Option<usize>,
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    pub seed: u64,
    /// HDi, one-shot and cross-fitted, uses the `β` co-fitted with the treatment column.
    pub hdi_cofit: bool,
    /// Freeze the score's baseline at the penalized `θ_l` instead of profiling it.
    pub fixed_baseline: bool,
    /// Penalize covariates on the unit-variance scale; coefficients are
    /// always returned on the original scale.
    pub standardize: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k: 10,
            cv_folds: 10,
            inner_cv_folds: None,
            n_lambdas: 100,
            lambda_min_ratio: 0.05,
            seed: 1,
            hdi_cofit: true,
            fixed_baseline: false,
            standardize: true,
        }
    }
}

impl FitConfig {
    pub fn inner_folds(&self) -> usize {
        self.inner_cv_folds.unwrap_or(self.k.saturating_sub(1)).max(2)
    }
}

/// Selected additive hazards coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaFit {
    pub beta: Vec<f64>,
    pub theta_l: Option<f64>,
    pub lambda: f64,
}

impl BetaFit {
    pub fn s_hat(&self) -> usize {
        self.beta.iter().filter(|&&b| b != 0.0).count()
    }

    fn from_fit(fit: AhazLassoFit) -> Self {
        Self {
            beta: fit.beta,
            theta_l: fit.theta_l,
            lambda: fit.lambda,
        }
    }
}

/// Selected propensity coefficients, intercept first.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaFit {
    pub gamma: Vec<f64>,
    pub lambda: f64,
    pub separation: bool,
}

impl GammaFit {
    pub fn s_hat(&self) -> usize {
        self.gamma[1..].iter().filter(|&&g| g != 0.0).count()
    }
}

/// Which outcome-model fits a consumer needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Needs {
    /// `β` co-fitted with a penalized treatment column, `θ_l` discarded.
    pub cofit: bool,
    /// `β` fitted on the covariates alone.
    pub plain: bool,
}

/// Outcome and treatment nuisance fits on one training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Nuisance {
    pub cofit: Option<BetaFit>,
    pub plain: Option<BetaFit>,
    pub gamma: GammaFit,
}

/// Fits the requested nuisances with `folds`-fold penalty selection.
pub fn fit_nuisance(
    train: &SurvivalDataset,
    needs: Needs,
    folds: usize,
    cfg: &FitConfig,
    seed: u64,
) -> Result<Nuisance> {
    let ahaz_cfg = |include_treatment| AhazCvConfig {
        folds,
        n_lambdas: cfg.n_lambdas,
        lambda_min_ratio: cfg.lambda_min_ratio,
        include_treatment,
        penalize_treatment: true,
        seed,
    };
    let logit_cfg = LogitCvConfig {
        folds,
        n_lambdas: cfg.n_lambdas,
        lambda_min_ratio: cfg.lambda_min_ratio,
        seed,
    };
    let (scaled, scales) = standardized(train, cfg.standardize)?;
    let train = &scaled;
    let (gamma, (cofit, plain)) = rayon::join(
        || select_lambda_cv_logit(train.covariates(), train.treatments(), &logit_cfg),
        || {
            rayon::join(
                || {
                    needs
                        .cofit
                        .then(|| ahaz::select_lambda_cv(train, &ahaz_cfg(true)))
                        .transpose()
                },
                || {
                    needs
                        .plain
                        .then(|| ahaz::select_lambda_cv(train, &ahaz_cfg(false)))
                        .transpose()
                },
            )
        },
    );
    let gamma = gamma?;
    let mut gamma_coef = gamma.fit.gamma;
    unscale(&mut gamma_coef[1..], &scales);
    let beta_fit = |r: ahaz::AhazCvResult| {
        let mut b = BetaFit::from_fit(r.fit);
        unscale(&mut b.beta, &scales);
        b
    };
    Ok(Nuisance {
        cofit: cofit?.map(beta_fit),
        plain: plain?.map(beta_fit),
        gamma: GammaFit {
            gamma: gamma_coef,
            lambda: gamma.lambda_star,
            separation: gamma.fit.separation,
        },
    })
}

/// Population standard deviation of each covariate, 1 for constant columns.
pub fn covariate_scales(data: &SurvivalDataset) -> Vec<f64> {
    let n = data.n() as f64;
    data.covariates()
        .column_iter()
        .map(|c| {
            let mean = c.sum() / n;
            let sd = (c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            if sd > 1e-12 * mean.abs().max(1.0) {
                sd
            } else {
                1.0
            }
        })
        .collect()
}

/// `data` with unit-variance covariates and the scales used, or `data`
/// unchanged with unit scales.
fn standardized(data: &SurvivalDataset, on: bool) -> Result<(SurvivalDataset, Vec<f64>)> {
    if !on {
        return Ok((data.clone(), vec![1.0; data.p()]));
    }
    let scales = covariate_scales(data);
    let mut z = data.covariates().clone();
    for (mut col, s) in z.column_iter_mut().zip(&scales) {
        col /= *s;
    }
    Ok((data.with_covariates(z)?, scales))
}

/// Maps coefficients of unit-variance covariates back to the original scale.
fn unscale(coef: &mut [f64], scales: &[f64]) {
    for (b, s) in coef.iter_mut().zip(scales) {
        *b /= s;
    }
}

fn attach(report: &mut TreatmentEffectReport, beta: &BetaFit, gamma: &GammaFit) {
    report.lambda_beta = Some(beta.lambda);
    report.lambda_gamma = Some(gamma.lambda);
    report.s_hat_beta = Some(beta.s_hat());
    report.s_hat_gamma = Some(gamma.s_hat());
}

/// One-shot orthogonal score estimator from given nuisances.
pub fn score_with(
    data: &SurvivalDataset,
    index: &RiskSetIndex,
    beta: &BetaFit,
    gamma: &GammaFit,
    fixed_baseline: bool,
) -> Result<TreatmentEffectReport> {
    let mut baseline = breslow(data, index, &beta.beta);
    if fixed_baseline {
        baseline = baseline.fixed_at(beta.theta_l.unwrap_or(0.0));
    }
    let ctx = ScoreContext::one_shot(data, &beta.beta, &gamma.gamma, baseline)?;
    let mut report = solve_theta(&ctx, Method::Score)?;
    attach(&mut report, beta, gamma);
    Ok(report)
}

/// One-shot HDi estimator from given nuisances.
pub fn hdi_with(
    data: &SurvivalDataset,
    index: &RiskSetIndex,
    beta: &BetaFit,
    gamma: &GammaFit,
) -> Result<TreatmentEffectReport> {
    let mut report = hdi::hdi(data, index, &beta.beta, &gamma.gamma)?;
    attach(&mut report, beta, gamma);
    Ok(report)
}

/// The naive estimator: the treatment coefficient of the additive hazards
/// Lasso with the treatment left unpenalized. Its standard error is the
/// Lin–Ying sandwich `A⁻¹BA⁻¹/n` on the treatment and the selected
/// covariates, with `A = H_n` and `B = n⁻¹ Σ δ_i {W_i − W̄(X_i)}^{⊗2}`.
pub fn naive_lasso(data: &SurvivalDataset, cfg: &FitConfig) -> Result<TreatmentEffectReport> {
    let acfg = AhazCvConfig {
        folds: cfg.cv_folds,
        n_lambdas: cfg.n_lambdas,
        lambda_min_ratio: cfg.lambda_min_ratio,
        include_treatment: true,
        penalize_treatment: false,
        seed: cfg.seed,
    };
    let (scaled, _) = standardized(data, cfg.standardize)?;
    let cv = ahaz::select_lambda_cv(&scaled, &acfg)?;
    let fit = cv.fit;
    let theta = fit.theta_l.expect("design includes the treatment");
    let index = RiskSetIndex::new(data);
    let q = AhazQuadratic::build(data, &index, true)?;
    // design coordinates: 0 is the treatment, j + 1 is covariate j
    let mut sel = vec![0usize];
    sel.extend(fit.active_set.iter().map(|&j| j + 1));
    let se = lin_ying_se(data, &index, &q, &sel)?;
    let mut report = TreatmentEffectReport::new(Method::NaiveLasso, theta, se, data.n(), data.p())?;
    report.lambda_beta = Some(fit.lambda);
    report.s_hat_beta = Some(fit.active_set.len());
    Ok(report)
}

/// Sandwich standard error of the first selected coordinate.
fn lin_ying_se(data: &SurvivalDataset, index: &RiskSetIndex, q: &AhazQuadratic, sel: &[usize]) -> Result<f64> {
    let s = sel.len();
    let n = data.n();
    let a = DMatrix::from_fn(s, s, |r, c| q.column(sel[c])[sel[r]]);
    let value = |i: usize, coord: usize| {
        if coord == 0 {
            data.treatment(i)
        } else {
            data.covariates()[(i, coord - 1)]
        }
    };
    let counts = index.at_risk_counts();
    let means: Vec<Vec<f64>> = sel
        .iter()
        .map(|&c| {
            index
                .risk_sums(|i| value(i, c))
                .iter()
                .zip(counts)
                .map(|(s, &r)| s / r as f64)
                .collect()
        })
        .collect();
    let mut b = DMatrix::zeros(s, s);
    for i in (0..n).filter(|&i| data.events()[i]) {
        let g = index.group_of(i);
        let r = DVector::from_fn(s, |a, _| value(i, sel[a]) - means[a][g]);
        b += &r * r.transpose();
    }
    b /= n as f64;
    let ainv = a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::DegenerateDesign("singular information for the naive estimator".into()))?;
    let v = &ainv * b * &ainv;
    let var = v[(0, 0)] / n as f64;
    if !(var > 0.0) {
        return Err(Error::ZeroDenominator("naive variance is not positive".into()));
    }
    Ok(var.sqrt())
}

/// Outcome of one method.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub method: Method,
    pub result: Result<TreatmentEffectReport>,
}

/// Reports plus the cross-fitting nuisances, when any were fitted.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub outcomes: Vec<MethodOutcome>,
    pub plan: Option<FoldPlan>,
    pub fold_nuisances: Option<Vec<FoldNuisance>>,
}

/// Runs `methods` on `data`, sharing nuisance fits between them.
pub fn run_methods(data: &SurvivalDataset, methods: &[Method], cfg: &FitConfig) -> PipelineOutput {
    let want = |m| methods.contains(&m);
    let mut outcomes = Vec::new();
    if want(Method::NaiveLasso) {
        outcomes.push(MethodOutcome {
            method: Method::NaiveLasso,
            result: naive_lasso(data, cfg),
        });
    }
    if want(Method::Score) || want(Method::Hdi) {
        let needs = Needs {
            cofit: want(Method::Score) || (want(Method::Hdi) && cfg.hdi_cofit),
            plain: want(Method::Hdi) && !cfg.hdi_cofit,
        };
        let index = RiskSetIndex::new(data);
        let nuis = fit_nuisance(data, needs, cfg.cv_folds, cfg, cfg.seed);
        for m in [Method::Score, Method::Hdi] {
            if !want(m) {
                continue;
            }
            let result = nuis.clone().and_then(|nu| match m {
                Method::Score => score_with(data, &index, nu.cofit.as_ref().expect("fitted"), &nu.gamma, cfg.fixed_baseline),
                _ => {
                    let beta = if cfg.hdi_cofit { &nu.cofit } else { &nu.plain };
                    hdi_with(data, &index, beta.as_ref().expect("fitted"), &nu.gamma)
                }
            });
            outcomes.push(MethodOutcome { method: m, result });
        }
    }
    let mut plan_out = None;
    let mut fold_out = None;
    if want(Method::ScoreCf) || want(Method::HdiCf) {
        let needs = Needs {
            cofit: want(Method::ScoreCf) || (want(Method::HdiCf) && cfg.hdi_cofit),
            plain: want(Method::HdiCf) && !cfg.hdi_cofit,
        };
        let fitted = FoldPlan::stratified(data.treatments(), cfg.k, cfg.seed)
            .and_then(|plan| crossfit::fit_fold_nuisances(data, &plan, cfg, needs).map(|f| (plan, f)));
        for m in [Method::ScoreCf, Method::HdiCf] {
            if !want(m) {
                continue;
            }
            let result = match &fitted {
                Err(e) => Err(e.clone()),
                Ok((plan, folds)) => match m {
                    Method::ScoreCf => crossfit::crossfit_score_with(data, plan, folds, cfg.fixed_baseline),
                    _ => crossfit::crossfit_hdi_with(data, plan, folds),
                },
            };
            outcomes.push(MethodOutcome { method: m, result });
        }
        if let Ok((plan, folds)) = fitted {
            plan_out = Some(plan);
            fold_out = Some(folds);
        }
    }
    outcomes.sort_by_key(|o| o.method);
    PipelineOutput {
        outcomes,
        plan: plan_out,
        fold_nuisances: fold_out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inner_folds_default_to_k_minus_one() {
        let cfg = FitConfig::default();
        assert_eq!(cfg.inner_folds(), 9);
        let cfg = FitConfig {
            inner_cv_folds: Some(4),
            ..FitConfig::default()
        };
        assert_eq!(cfg.inner_folds(), 4);
    }
}
