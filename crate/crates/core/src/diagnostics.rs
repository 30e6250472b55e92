//! Nuisance diagnostics: average testing deviances, magnitudes of
//! estimation, propensity summaries and covariate balance.

use serde::{Deserialize, Serialize};

use crate::ahaz::quadratic_at;
use crate::baseline::{propensities, BalanceWeights};
use crate::crossfit::FoldNuisance;
use crate::data::{RiskSetIndex, SurvivalDataset};
use crate::error::{Error, Result};
use crate::folds::FoldPlan;

/// Magnitudes above this are reported as divergent.
pub const DIVERGENCE_LEVEL: f64 = 100.0;
/// Relative size (to `n/k`) below which a magnitude denominator counts as zero.
pub const DENOMINATOR_FLOOR: f64 = 1e-8;

/// Known truth of a simulated dataset.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Truth {
    /// True outcome coefficients.
    pub beta0: Option<Vec<f64>>,
    /// The outcome model has hazard contribution `exp(β₀'Z)` rather than `β₀'Z`.
    pub exp_link: bool,
    /// `E(D_i | Z_i)` for every subject.
    pub propensity: Option<Vec<f64>>,
}

/// Quantiles of fitted propensities within one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsSummary {
    pub arm: u8,
    pub count: usize,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceDiagnostics {
    pub deviance_beta: Option<f64>,
    pub deviance_gamma: Option<f64>,
    pub magnitude_beta: Option<f64>,
    pub magnitude_gamma: Option<f64>,
    /// A magnitude denominator vanished or the propensity magnitude exceeds 100.
    pub divergent: bool,
    pub ps_summary: Vec<PsSummary>,
}

/// Linear interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-arm propensity quantiles.
pub fn ps_summary(treatments: &[bool], ps: &[f64]) -> Vec<PsSummary> {
    (0..=1u8)
        .filter_map(|arm| {
            let mut v: Vec<f64> = ps
                .iter()
                .zip(treatments)
                .filter(|(_, &d)| d == (arm == 1))
                .map(|(&p, _)| p)
                .collect();
            if v.is_empty() {
                return None;
            }
            v.sort_by(f64::total_cmp);
            Some(PsSummary {
                arm,
                count: v.len(),
                min: v[0],
                q25: quantile(&v, 0.25),
                median: quantile(&v, 0.5),
                q75: quantile(&v, 0.75),
                max: v[v.len() - 1],
            })
        })
        .collect()
}

fn fold_beta(f: &FoldNuisance) -> &[f64] {
    &f.hdi_beta().expect("fold has an outcome fit").beta
}

/// Cross-fitted average testing deviances `(𝒟̂_β, 𝒟̂_γ)`, each present when
/// the matching truth is known.
pub fn empirical_deviances(
    data: &SurvivalDataset,
    plan: &FoldPlan,
    folds: &[FoldNuisance],
    truth: &Truth,
) -> Result<(Option<f64>, Option<f64>)> {
    if truth.beta0.is_none() && truth.propensity.is_none() {
        return Err(Error::TruthRequired);
    }
    let n = data.n() as f64;
    let dev_beta = truth.beta0.as_ref().map(|b0| {
        let true_lp = data.linear_predictor(b0);
        let mut acc = 0.0;
        for (j, f) in folds.iter().enumerate() {
            let lp = data.linear_predictor(fold_beta(f));
            for i in plan.in_fold(j) {
                let target = if truth.exp_link { true_lp[i].exp() } else { true_lp[i] };
                acc += (lp[i] - target).powi(2) * data.time(i);
            }
        }
        (acc / n).sqrt()
    });
    let dev_gamma = truth.propensity.as_ref().map(|m| {
        let mut acc = 0.0;
        for (j, f) in folds.iter().enumerate() {
            let ps = propensities(data, &f.nuisance.gamma.gamma);
            for i in plan.in_fold(j) {
                acc += (ps[i] - m[i]).powi(2);
            }
        }
        (acc / n).sqrt()
    });
    Ok((dev_beta, dev_gamma))
}

/// Magnitudes `(M̂_β, M̂_γ, divergent)`: maxima over folds of the in-fold
/// outcome-model norm and of the inverse balancing masses.
pub fn empirical_magnitudes(
    data: &SurvivalDataset,
    plan: &FoldPlan,
    folds: &[FoldNuisance],
) -> (f64, f64, bool) {
    let n = data.n() as f64;
    let k = plan.k() as f64;
    let scale = n / k;
    let mut m_beta: f64 = 0.0;
    let mut m_gamma: f64 = 0.0;
    let mut divergent = false;
    for (j, f) in folds.iter().enumerate() {
        let idx = plan.in_fold(j);
        let sub = data.subset(&idx);
        let index = RiskSetIndex::new(&sub);
        // quadratic_at normalizes by the fold size
        let (quad, _) = quadratic_at(&sub, &index, false, fold_beta(f));
        m_beta = m_beta.max((quad * sub.n() as f64 / scale).max(0.0).sqrt());
        let w = BalanceWeights::from_gamma(&sub, &f.nuisance.gamma.gamma);
        let tau = data.tau();
        let d0: f64 = (0..sub.n()).map(|i| w.w0[i] * sub.time(i)).sum();
        let d1: f64 = (0..sub.n())
            .filter(|&i| sub.time(i) >= tau)
            .map(|i| w.w1[i])
            .sum();
        for d in [d0, d1] {
            if d < scale * DENOMINATOR_FLOOR {
                divergent = true;
            }
        }
        m_gamma = m_gamma.max(scale / d0 + scale / d1);
    }
    if m_gamma > DIVERGENCE_LEVEL {
        divergent = true;
    }
    (m_beta, m_gamma, divergent)
}

/// Full diagnostics; deviances only when `truth` is given.
pub fn diagnose(
    data: &SurvivalDataset,
    plan: &FoldPlan,
    folds: &[FoldNuisance],
    truth: Option<&Truth>,
) -> Result<NuisanceDiagnostics> {
    let (deviance_beta, deviance_gamma) = match truth {
        Some(t) => empirical_deviances(data, plan, folds, t)?,
        None => (None, None),
    };
    let (mb, mg, divergent) = empirical_magnitudes(data, plan, folds);
    if divergent {
        log::warn!("divergent magnitude of estimation: M_gamma = {mg}");
    }
    let mut ps = vec![0.0; data.n()];
    for (j, f) in folds.iter().enumerate() {
        let all = propensities(data, &f.nuisance.gamma.gamma);
        for i in plan.in_fold(j) {
            ps[i] = all[i];
        }
    }
    Ok(NuisanceDiagnostics {
        deviance_beta,
        deviance_gamma,
        magnitude_beta: Some(mb),
        magnitude_gamma: Some(mg),
        divergent,
        ps_summary: ps_summary(data.treatments(), &ps),
    })
}

impl NuisanceDiagnostics {
    /// Two-column `name,value` table.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Io(e.to_string());
        wtr.write_record(["name", "value"]).map_err(err)?;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
        wtr.write_record(["deviance_beta", &opt(self.deviance_beta)]).map_err(err)?;
        wtr.write_record(["deviance_gamma", &opt(self.deviance_gamma)]).map_err(err)?;
        wtr.write_record(["magnitude_beta", &opt(self.magnitude_beta)]).map_err(err)?;
        wtr.write_record(["magnitude_gamma", &opt(self.magnitude_gamma)]).map_err(err)?;
        wtr.write_record(["divergent", &format!("{}", self.divergent)]).map_err(err)?;
        for s in &self.ps_summary {
            for (name, v) in [
                ("min", s.min),
                ("q25", s.q25),
                ("median", s.median),
                ("q75", s.q75),
                ("max", s.max),
            ] {
                wtr.write_record([format!("ps_arm{}_{name}", s.arm), format!("{v}")]).map_err(err)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// A covariate threshold: marginal `Z_j ≤ z` or joint `Z ≤ z` componentwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Probe {
    Marginal { covariate: usize, threshold: f64 },
    Joint(Vec<f64>),
}

impl Probe {
    fn holds(&self, z: &nalgebra::DMatrix<f64>, i: usize) -> bool {
        match self {
            Probe::Marginal { covariate, threshold } => z[(i, *covariate)] <= *threshold,
            Probe::Joint(t) => t.iter().enumerate().all(|(j, &v)| z[(i, j)] <= v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceRow {
    pub probe: Probe,
    pub f0: f64,
    pub f1: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub rows: Vec<BalanceRow>,
    pub sup_gap: f64,
}

/// Deciles of each covariate's marginal; for `p ≤ 3` also the joint grid of
/// deciles.
pub fn decile_probes(data: &SurvivalDataset) -> Vec<Probe> {
    let z = data.covariates();
    let deciles: Vec<Vec<f64>> = (0..data.p())
        .map(|j| {
            let mut v: Vec<f64> = z.column(j).iter().cloned().collect();
            v.sort_by(f64::total_cmp);
            (1..10).map(|q| quantile(&v, q as f64 / 10.0)).collect()
        })
        .collect();
    let mut probes: Vec<Probe> = deciles
        .iter()
        .enumerate()
        .flat_map(|(j, d)| {
            d.iter().map(move |&t| Probe::Marginal {
                covariate: j,
                threshold: t,
            })
        })
        .collect();
    if (2..=3).contains(&data.p()) {
        let mut grid: Vec<Vec<f64>> = vec![vec![]];
        for d in &deciles {
            grid = grid
                .into_iter()
                .flat_map(|g| {
                    d.iter().map(move |&t| {
                        let mut g = g.clone();
                        g.push(t);
                        g
                    })
                })
                .collect();
        }
        probes.extend(grid.into_iter().map(Probe::Joint));
    }
    probes
}

/// Weighted covariate distribution functions of the two arms at each probe.
pub fn balance_report(data: &SurvivalDataset, gamma: &[f64], probes: &[Probe]) -> Result<BalanceReport> {
    let w = BalanceWeights::from_gamma(data, gamma);
    let m0: f64 = w.w0.iter().sum();
    let m1: f64 = w.w1.iter().sum();
    if !(m0 > 0.0) {
        return Err(Error::ZeroWeightMass(0));
    }
    if !(m1 > 0.0) {
        return Err(Error::ZeroWeightMass(1));
    }
    let z = data.covariates();
    let mut sup_gap: f64 = 0.0;
    let rows = probes
        .iter()
        .map(|probe| {
            let (mut a0, mut a1) = (0.0, 0.0);
            for i in 0..data.n() {
                if probe.holds(z, i) {
                    a0 += w.w0[i];
                    a1 += w.w1[i];
                }
            }
            let (f0, f1) = (a0 / m0, a1 / m1);
            let gap = (f0 - f1).abs();
            sup_gap = sup_gap.max(gap);
            BalanceRow {
                probe: probe.clone(),
                f0,
                f1,
                gap,
            }
        })
        .collect();
    Ok(BalanceReport { rows, sup_gap })
}

impl BalanceReport {
    /// `kind,covariate,threshold,f0,f1,gap`; joint thresholds are `;`-separated.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let err = |e: csv::Error| Error::Io(e.to_string());
        wtr.write_record(["kind", "covariate", "threshold", "f0", "f1", "gap"])
            .map_err(err)?;
        for r in &self.rows {
            let (kind, cov, thr) = match &r.probe {
                Probe::Marginal { covariate, threshold } => {
                    ("marginal", format!("z{}", covariate + 1), format!("{threshold}"))
                }
                Probe::Joint(t) => (
                    "joint",
                    String::new(),
                    t.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(";"),
                ),
            };
            wtr.write_record([
                kind.to_string(),
                cov,
                thr,
                format!("{}", r.f0),
                format!("{}", r.f1),
                format!("{}", r.gap),
            ])
            .map_err(err)?;
        }
        wtr.flush()?;
        Ok(())
    }
}
