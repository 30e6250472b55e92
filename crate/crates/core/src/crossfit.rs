//! k-fold cross-fitting of the score and HDi estimators.
//!
//! Nuisances for fold `j` are fitted on the out-of-fold subjects `I_{−j}`
//! and evaluated on the in-fold subjects `I_j` only.

use rayon::prelude::*;

use crate::baseline::{breslow, propensities, BalanceWeights, BaselineEstimate};
use crate::data::{RiskSetIndex, SurvivalDataset};
use crate::error::{Error, Result};
use crate::folds::FoldPlan;
use crate::hdi::hdi_parts;
use crate::pipeline::{fit_nuisance, BetaFit, FitConfig, Needs, Nuisance};
use crate::report::{FoldSummary, Method, TreatmentEffectReport};
use crate::score::{sandwich_sigma2, solve_theta, ScoreContext, ScoreTerm};

/// Nuisances trained on `I_{−j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldNuisance {
    pub fold: usize,
    pub nuisance: Nuisance,
    /// Profiled Breslow estimator on `I_{−j}` with the co-fitted `β`.
    pub score_baseline: Option<BaselineEstimate>,
}

impl FoldNuisance {
    /// Wraps fitted nuisances and builds the out-of-fold Breslow estimator.
    pub fn from_nuisance(data: &SurvivalDataset, plan: &FoldPlan, fold: usize, nuisance: Nuisance) -> Self {
        let score_baseline = nuisance.cofit.as_ref().map(|b| {
            let train = data.subset(&plan.out_of_fold(fold));
            let index = RiskSetIndex::new(&train);
            breslow(&train, &index, &b.beta)
        });
        Self {
            fold,
            nuisance,
            score_baseline,
        }
    }

    /// The `β` used by HDi: covariate-only when that fit exists, else the co-fit.
    pub fn hdi_beta(&self) -> Option<&BetaFit> {
        self.nuisance.plain.as_ref().or(self.nuisance.cofit.as_ref())
    }

    fn summary(&self, beta: &BetaFit) -> FoldSummary {
        FoldSummary {
            lambda_beta: beta.lambda,
            lambda_gamma: self.nuisance.gamma.lambda,
            s_hat_beta: beta.s_hat(),
            s_hat_gamma: self.nuisance.gamma.s_hat(),
        }
    }
}

/// Seed for the penalty selection inside fold `j`.
pub fn fold_seed(seed: u64, j: usize) -> u64 {
    seed.wrapping_add(1 + j as u64)
}

/// Fits every fold's nuisances; folds run concurrently.
pub fn fit_fold_nuisances(
    data: &SurvivalDataset,
    plan: &FoldPlan,
    cfg: &FitConfig,
    needs: Needs,
) -> Result<Vec<FoldNuisance>> {
    if plan.n() != data.n() {
        return Err(Error::InvalidConfig("fold plan does not match the dataset".into()));
    }
    if (0..plan.k()).any(|j| plan.in_fold(j).is_empty()) {
        return Err(Error::InvalidConfig("empty fold".into()));
    }
    plan.check_both_classes(data.treatments())?;
    (0..plan.k())
        .into_par_iter()
        .map(|j| {
            let train = data.subset(&plan.out_of_fold(j));
            let nu = fit_nuisance(&train, needs, cfg.inner_folds(), cfg, fold_seed(cfg.seed, j))?;
            Ok(FoldNuisance::from_nuisance(data, plan, j, nu))
        })
        .collect()
}

/// The cross-fitted score estimator: the root of `k⁻¹ Σ_j φ^{(j)}(θ)`, each
/// `φ^{(j)}` an in-fold mean.
pub fn crossfit_score_with(
    data: &SurvivalDataset,
    plan: &FoldPlan,
    folds: &[FoldNuisance],
    fixed_baseline: bool,
) -> Result<TreatmentEffectReport> {
    let k = plan.k();
    let mut terms = Vec::with_capacity(k);
    let mut per_fold = Vec::with_capacity(k);
    for (j, f) in folds.iter().enumerate() {
        let missing = || Error::InvalidConfig("cross-fitted score needs the co-fitted β".into());
        let beta = f.nuisance.cofit.as_ref().ok_or_else(missing)?;
        let mut baseline = f.score_baseline.clone().ok_or_else(missing)?;
        if fixed_baseline {
            baseline = baseline.fixed_at(beta.theta_l.unwrap_or(0.0));
        }
        terms.push(ScoreTerm::new(
            data,
            &plan.in_fold(j),
            &beta.beta,
            &f.nuisance.gamma.gamma,
            baseline,
            1.0 / k as f64,
        )?);
        per_fold.push(f.summary(beta));
    }
    let ctx = ScoreContext::from_terms(terms, data.tau(), data.p());
    let mut report = solve_theta(&ctx, Method::ScoreCf)?;
    report.k = Some(k);
    report.per_fold = Some(per_fold);
    Ok(report)
}

/// The cross-fitted HDi estimator with numerator and denominator pooled
/// across folds. A fold without any treated weight contributes nothing.
pub fn crossfit_hdi_with(
    data: &SurvivalDataset,
    plan: &FoldPlan,
    folds: &[FoldNuisance],
) -> Result<TreatmentEffectReport> {
    let k = plan.k();
    let mut num = 0.0;
    let mut den = 0.0;
    let (mut x, mut e, mut d, mut ps_all) = (vec![], vec![], vec![], vec![]);
    let mut per_fold = Vec::with_capacity(k);
    for (j, f) in folds.iter().enumerate() {
        let beta = f
            .hdi_beta()
            .ok_or_else(|| Error::InvalidConfig("cross-fitted HDi needs a fitted β".into()))?;
        per_fold.push(f.summary(beta));
        let sub = data.subset(&plan.in_fold(j));
        let index = RiskSetIndex::new(&sub);
        let ps = propensities(&sub, &f.nuisance.gamma.gamma);
        let w = BalanceWeights::from_propensities(sub.treatments(), &ps);
        let horizon = match hdi_parts(&sub, &index, &beta.beta, &w) {
            Ok(parts) => {
                num += parts.numerator;
                den += parts.denominator;
                parts.horizon
            }
            Err(Error::NoOverlapInArm { .. }) => 0.0,
            Err(err) => return Err(err),
        };
        for i in 0..sub.n() {
            x.push(sub.time(i).min(horizon));
            e.push(sub.events()[i] && sub.time(i) <= horizon);
            d.push(sub.treatments()[i]);
        }
        ps_all.extend(ps);
    }
    if !(den > 0.0) {
        if x.iter().all(|&t| t == 0.0) {
            return Err(Error::NoOverlapInArm { arm: 1, time: 0.0 });
        }
        return Err(Error::ZeroDenominator("pooled Σ w⁰_i X_i = 0".into()));
    }
    let theta = num / den;
    let sigma2 = sandwich_sigma2(&x, &e, &d, &ps_all, theta)?;
    let n = data.n();
    let mut report = TreatmentEffectReport::new(Method::HdiCf, theta, (sigma2 / n as f64).sqrt(), n, data.p())?;
    report.ps_min = ps_all.iter().cloned().reduce(f64::min);
    report.ps_max = ps_all.iter().cloned().reduce(f64::max);
    report.k = Some(k);
    report.per_fold = Some(per_fold);
    Ok(report)
}

pub fn crossfit_score(data: &SurvivalDataset, plan: &FoldPlan, cfg: &FitConfig) -> Result<TreatmentEffectReport> {
    let needs = Needs {
        cofit: true,
        plain: false,
    };
    let folds = fit_fold_nuisances(data, plan, cfg, needs)?;
    crossfit_score_with(data, plan, &folds, cfg.fixed_baseline)
}

pub fn crossfit_hdi(data: &SurvivalDataset, plan: &FoldPlan, cfg: &FitConfig) -> Result<TreatmentEffectReport> {
    let needs = Needs {
        cofit: cfg.hdi_cofit,
        plain: !cfg.hdi_cofit,
    };
    let folds = fit_fold_nuisances(data, plan, cfg, needs)?;
    crossfit_hdi_with(data, plan, &folds)
}
