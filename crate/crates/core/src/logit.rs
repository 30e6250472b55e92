//! L1-penalized logistic regression for the propensity score, with an
//! unpenalized intercept.
//!
//! Minimises `n⁻¹ Σ {log(1 + e^{η_i}) − D_i η_i} + λ Σ_{j≥1} |γ_j|`,
//! `η_i = γ_0 + Z_i'γ_{1:}`, by proximal Newton (IRLS outer loop with a
//! backtracking line search on the true objective, coordinate descent inner
//! loop) over a working set grown from strong-rule screening.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::folds::FoldPlan;
use crate::lasso::{geometric_grid, soft_threshold};

/// Linear predictors are clamped to this magnitude before `expit`.
pub const ETA_CLAMP: f64 = 30.0;
const WEIGHT_FLOOR: f64 = 1e-5;
const MAX_OUTER: usize = 200;
const OUTER_TOL: f64 = 1e-8;
const INNER_TOL: f64 = 1e-10;
const INNER_PASSES: usize = 10_000;

#[inline]
pub fn expit(eta: f64) -> f64 {
    let e = eta.clamp(-ETA_CLAMP, ETA_CLAMP);
    1.0 / (1.0 + (-e).exp())
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn col(z: &DMatrix<f64>, j: usize) -> &[f64] {
    let n = z.nrows();
    &z.as_slice()[j * n..(j + 1) * n]
}

/// A penalized logistic fit. `gamma[0]` is the intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitLassoFit {
    pub gamma: Vec<f64>,
    pub lambda: f64,
    /// Nonzero slope indices (0-based over covariates).
    pub active_set: Vec<usize>,
    /// Mean in-sample negative log-likelihood.
    pub deviance: f64,
    /// Every linear predictor reached the clamp: (quasi-)separation.
    pub separation: bool,
    pub iterations: usize,
}

impl LogitLassoFit {
    /// `γ_0 + Z_i'γ_{1:}` for each row of `z`.
    pub fn linear_predictor(&self, z: &DMatrix<f64>) -> Vec<f64> {
        linear_predictor(z, &self.gamma)
    }

    /// Fitted propensities `expit(γ'Z̃_i)`, in `(0, 1)`.
    pub fn propensities(&self, z: &DMatrix<f64>) -> Vec<f64> {
        self.linear_predictor(z).into_iter().map(expit).collect()
    }

    /// An intercept-plus-slopes vector wrapped as a fit (no optimisation).
    pub fn from_gamma(gamma: Vec<f64>) -> Self {
        let active_set = gamma[1..]
            .iter()
            .enumerate()
            .filter(|(_, &g)| g != 0.0)
            .map(|(j, _)| j)
            .collect();
        Self {
            gamma,
            lambda: 0.0,
            active_set,
            deviance: f64::NAN,
            separation: false,
            iterations: 0,
        }
    }
}

pub fn linear_predictor(z: &DMatrix<f64>, gamma: &[f64]) -> Vec<f64> {
    assert_eq!(gamma.len(), z.ncols() + 1);
    let mut eta = vec![gamma[0]; z.nrows()];
    for (j, &g) in gamma[1..].iter().enumerate() {
        if g != 0.0 {
            for (e, x) in eta.iter_mut().zip(col(z, j)) {
                *e += g * x;
            }
        }
    }
    eta
}

/// Mean negative log-likelihood at linear predictors `eta`.
pub fn mean_nll(eta: &[f64], d: &[bool]) -> f64 {
    let s: f64 = eta
        .iter()
        .zip(d)
        .map(|(&e, &di)| softplus(e) - if di { e } else { 0.0 })
        .sum();
    s / eta.len() as f64
}

/// Sum of held-out negative log-likelihoods.
pub fn total_nll(eta: &[f64], d: &[bool]) -> f64 {
    mean_nll(eta, d) * eta.len() as f64
}

/// Slope gradient of the mean negative log-likelihood, `n⁻¹ Σ Z_ij (p_i − D_i)`.
fn slope_gradient(z: &DMatrix<f64>, resid: &[f64]) -> Vec<f64> {
    let n = z.nrows() as f64;
    (0..z.ncols())
        .map(|j| col(z, j).iter().zip(resid).map(|(x, r)| x * r).sum::<f64>() / n)
        .collect()
}

struct Problem<'a> {
    z: &'a DMatrix<f64>,
    d: &'a [bool],
    lambda: f64,
}

impl Problem<'_> {
    fn objective(&self, eta: &[f64], gamma: &[f64]) -> f64 {
        mean_nll(eta, self.d) + self.lambda * gamma[1..].iter().map(|g| g.abs()).sum::<f64>()
    }

    /// Proximal Newton over the working set `ws` (slope indices); other
    /// slopes stay at their current value (zero).
    fn newton(&self, gamma: &mut [f64], eta: &mut Vec<f64>, ws: &[usize]) -> Result<(usize, bool)> {
        let n = self.z.nrows();
        let nf = n as f64;
        let mut obj = self.objective(eta, gamma);
        let mut last_step = f64::INFINITY;
        for it in 1..=MAX_OUTER {
            if eta.iter().all(|e| e.abs() >= ETA_CLAMP) {
                return Ok((it, true));
            }
            let p: Vec<f64> = eta.iter().map(|&e| expit(e)).collect();
            let w: Vec<f64> = p.iter().map(|&q| (q * (1.0 - q)).max(WEIGHT_FLOOR)).collect();
            // u = D − p − W(η' − η); starts at D − p
            let mut u: Vec<f64> = p
                .iter()
                .zip(self.d)
                .map(|(&q, &di)| if di { 1.0 - q } else { -q })
                .collect();
            let hdiag: Vec<f64> = ws
                .iter()
                .map(|&j| col(self.z, j).iter().zip(&w).map(|(x, wi)| wi * x * x).sum::<f64>() / nf)
                .collect();
            let h0: f64 = w.iter().sum::<f64>() / nf;
            let start = gamma.to_vec();
            let mut new = gamma.to_vec();
            let inner_tol = (0.01 * last_step).clamp(INNER_TOL, 1e-4);
            let mut full = true;
            for _pass in 0..INNER_PASSES {
                let mut max_delta = 0.0_f64;
                // intercept
                {
                    let grad: f64 = u.iter().sum::<f64>() / nf;
                    let delta = grad / h0;
                    if delta != 0.0 {
                        new[0] += delta;
                        for (ui, wi) in u.iter_mut().zip(&w) {
                            *ui -= wi * delta;
                        }
                    }
                    max_delta = max_delta.max(delta.abs());
                }
                for (k, &j) in ws.iter().enumerate() {
                    let hj = hdiag[k];
                    if hj <= 0.0 || (!full && new[j + 1] == 0.0) {
                        continue;
                    }
                    let x = col(self.z, j);
                    let grad: f64 = x.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / nf;
                    let old = new[j + 1];
                    let val = soft_threshold(grad + hj * old, self.lambda) / hj;
                    let delta = val - old;
                    if delta != 0.0 {
                        new[j + 1] = val;
                        for ((ui, wi), xi) in u.iter_mut().zip(&w).zip(x) {
                            *ui -= wi * xi * delta;
                        }
                    }
                    max_delta = max_delta.max(delta.abs());
                }
                // cycle on the nonzero coordinates, then confirm with a full pass
                if max_delta < inner_tol {
                    if full {
                        break;
                    }
                    full = true;
                } else {
                    full = false;
                }
            }
            // backtracking on the true objective
            let dir: Vec<f64> = new.iter().zip(&start).map(|(a, b)| a - b).collect();
            let mut deta = vec![dir[0]; n];
            for &j in ws {
                let dj = dir[j + 1];
                if dj != 0.0 {
                    for (e, x) in deta.iter_mut().zip(col(self.z, j)) {
                        *e += dj * x;
                    }
                }
            }
            let grad_dot: f64 = {
                let resid: Vec<f64> = p
                    .iter()
                    .zip(self.d)
                    .map(|(&q, &di)| q - if di { 1.0 } else { 0.0 })
                    .collect();
                resid.iter().zip(&deta).map(|(r, de)| r * de).sum::<f64>() / nf
            };
            let pen_old: f64 = start[1..].iter().map(|g| g.abs()).sum();
            let pen_new: f64 = new[1..].iter().map(|g| g.abs()).sum();
            let decrease = grad_dot + self.lambda * (pen_new - pen_old);
            let mut t = 1.0;
            let mut accepted = false;
            let mut trial_eta = vec![0.0; n];
            let mut trial = vec![0.0; gamma.len()];
            for _ in 0..40 {
                for (k, tg) in trial.iter_mut().enumerate() {
                    *tg = start[k] + t * dir[k];
                }
                for ((te, e), de) in trial_eta.iter_mut().zip(eta.iter()).zip(&deta) {
                    *te = e + t * de;
                }
                let cand = self.objective(&trial_eta, &trial);
                if cand <= obj + 1e-4 * t * decrease.min(0.0) + 1e-15 * obj.abs() {
                    accepted = true;
                    obj = cand;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                // no descent direction left at working precision
                return Ok((it, false));
            }
            let step = dir.iter().map(|d| (t * d).abs()).fold(0.0_f64, f64::max);
            gamma.copy_from_slice(&trial);
            std::mem::swap(eta, &mut trial_eta);
            if step < OUTER_TOL {
                return Ok((it, false));
            }
            last_step = step;
        }
        Err(Error::NoConvergence {
            sweeps: MAX_OUTER,
            max_change: f64::NAN,
        })
    }
}

/// Fits at a single `λ`, optionally warm-started, with an optional initial
/// working set. Returns the fit and the full slope gradient at the solution.
fn fit_with(
    z: &DMatrix<f64>,
    d: &[bool],
    lambda: f64,
    init: Option<&[f64]>,
    screen: &[usize],
) -> Result<(LogitLassoFit, Vec<f64>)> {
    let n = z.nrows();
    let p = z.ncols();
    if d.len() != n {
        return Err(Error::InvalidData("treatment length mismatch".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be nonnegative, got {lambda}")));
    }
    let mut gamma = match init {
        Some(g) => g.to_vec(),
        None => {
            let mean = d.iter().filter(|&&x| x).count() as f64 / n as f64;
            let mut g = vec![0.0; p + 1];
            g[0] = (mean / (1.0 - mean)).ln().clamp(-ETA_CLAMP, ETA_CLAMP);
            g
        }
    };
    let mut in_ws = vec![false; p];
    for j in 0..p {
        if gamma[j + 1] != 0.0 {
            in_ws[j] = true;
        }
    }
    for &j in screen {
        in_ws[j] = true;
    }
    let prob = Problem { z, d, lambda };
    let mut eta = linear_predictor(z, &gamma);
    let mut iterations = 0;
    loop {
        let ws: Vec<usize> = (0..p).filter(|&j| in_ws[j]).collect();
        let (its, sep) = prob.newton(&mut gamma, &mut eta, &ws)?;
        iterations += its;
        let resid: Vec<f64> = eta
            .iter()
            .zip(d)
            .map(|(&e, &di)| expit(e) - if di { 1.0 } else { 0.0 })
            .collect();
        let grad = slope_gradient(z, &resid);
        let mut added = false;
        if !sep {
            for j in 0..p {
                if !in_ws[j] && grad[j].abs() > lambda * (1.0 + 1e-9) + 1e-12 {
                    in_ws[j] = true;
                    added = true;
                }
            }
        }
        if !added {
            let active_set = (0..p).filter(|&j| gamma[j + 1] != 0.0).collect();
            let fit = LogitLassoFit {
                deviance: mean_nll(&eta, d),
                separation: sep || eta.iter().all(|e| e.abs() >= ETA_CLAMP),
                gamma,
                lambda,
                active_set,
                iterations,
            };
            return Ok((fit, grad));
        }
    }
}

/// Penalized logistic fit at `lambda`.
pub fn fit_logit_lasso(z: &DMatrix<f64>, d: &[bool], lambda: f64) -> Result<LogitLassoFit> {
    Ok(fit_with(z, d, lambda, None, &[])?.0)
}

/// Largest KKT violation: intercept gradient, zero slopes beyond `λ`, active
/// slopes off `−λ·sign`.
pub fn kkt_violation(z: &DMatrix<f64>, d: &[bool], fit: &LogitLassoFit) -> f64 {
    let eta = fit.linear_predictor(z);
    let resid: Vec<f64> = eta
        .iter()
        .zip(d)
        .map(|(&e, &di)| expit(e) - if di { 1.0 } else { 0.0 })
        .collect();
    let g0 = resid.iter().sum::<f64>() / z.nrows() as f64;
    let grad = slope_gradient(z, &resid);
    let mut worst = g0.abs();
    for (j, g) in grad.iter().enumerate() {
        let b = fit.gamma[j + 1];
        let v = if b == 0.0 {
            (g.abs() - fit.lambda).max(0.0)
        } else {
            (g + fit.lambda * b.signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// `‖n⁻¹ Σ (D_i − D̄) Z_i‖_∞`: the smallest penalty giving the intercept-only fit.
pub fn lambda_max(z: &DMatrix<f64>, d: &[bool]) -> f64 {
    let n = z.nrows() as f64;
    let mean = d.iter().filter(|&&x| x).count() as f64 / n;
    let resid: Vec<f64> = d.iter().map(|&di| if di { 1.0 } else { 0.0 } - mean).collect();
    slope_gradient(z, &resid)
        .iter()
        .map(|g| g.abs())
        .fold(0.0, f64::max)
}

/// Warm-started fits along a decreasing grid with sequential strong-rule screening.
pub fn fit_grid(z: &DMatrix<f64>, d: &[bool], grid: &[f64]) -> Result<Vec<LogitLassoFit>> {
    let mut out: Vec<LogitLassoFit> = Vec::with_capacity(grid.len());
    let mut prev: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    for &lambda in grid {
        let (fit, grad) = match &prev {
            None => fit_with(z, d, lambda, None, &[])?,
            Some((gamma, grad, lprev)) => {
                let cut = 2.0 * lambda - lprev;
                let screen: Vec<usize> = grad
                    .iter()
                    .enumerate()
                    .filter(|(_, g)| g.abs() >= cut)
                    .map(|(j, _)| j)
                    .collect();
                fit_with(z, d, lambda, Some(gamma), &screen)?
            }
        };
        prev = Some((fit.gamma.clone(), grad, lambda));
        out.push(fit);
    }
    Ok(out)
}

/// Regularization path on a geometric grid below `lambda_max`.
pub fn logit_path(
    z: &DMatrix<f64>,
    d: &[bool],
    n_lambdas: usize,
    lambda_min_ratio: f64,
) -> Result<Vec<LogitLassoFit>> {
    if n_lambdas < 2 {
        return Err(Error::InvalidConfig("n_lambdas must be at least 2".into()));
    }
    fit_grid(z, d, &geometric_grid(lambda_max(z, d), n_lambdas, lambda_min_ratio))
}

/// Options for logistic penalty selection.
#[derive(Debug, Clone, Copy)]
pub struct LogitCvConfig {
    pub folds: usize,
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    pub seed: u64,
}

impl Default for LogitCvConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            n_lambdas: 100,
            lambda_min_ratio: 0.05,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogitCvResult {
    pub lambda_star: f64,
    pub fit: LogitLassoFit,
    pub grid: Vec<f64>,
    /// Summed held-out negative log-likelihood per grid value.
    pub cv_loss: Vec<f64>,
}

/// Selects `λ` by summed held-out negative log-likelihood over treatment-
/// stratified folds, then refits on all rows.
pub fn select_lambda_cv_logit(z: &DMatrix<f64>, d: &[bool], cfg: &LogitCvConfig) -> Result<LogitCvResult> {
    let n = z.nrows();
    let treated = d.iter().filter(|&&x| x).count();
    if treated == 0 || treated == n {
        return Err(Error::SingleClassFold);
    }
    let grid = geometric_grid(lambda_max(z, d), cfg.n_lambdas.max(2), cfg.lambda_min_ratio);
    let plan = FoldPlan::stratified(d, cfg.folds, cfg.seed)?;
    plan.check_both_classes(d)?;
    let per_fold: Vec<Vec<f64>> = (0..plan.k())
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>> {
            let train = plan.out_of_fold(j);
            let test = plan.in_fold(j);
            let zt = rows(z, &train);
            let dt: Vec<bool> = train.iter().map(|&i| d[i]).collect();
            let zv = rows(z, &test);
            let dv: Vec<bool> = test.iter().map(|&i| d[i]).collect();
            let fits = fit_grid(&zt, &dt, &grid)?;
            Ok(fits
                .iter()
                .map(|f| total_nll(&f.linear_predictor(&zv), &dv))
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut cv_loss = vec![0.0; grid.len()];
    for losses in &per_fold {
        for (acc, l) in cv_loss.iter_mut().zip(losses) {
            *acc += l;
        }
    }
    let best = crate::ahaz::argmin(&cv_loss);
    let fit = fit_grid(z, d, &grid[..=best])?
        .pop()
        .expect("non-empty grid");
    Ok(LogitCvResult {
        lambda_star: grid[best],
        fit,
        grid,
        cv_loss,
    })
}

/// Row subset of a matrix.
pub(crate) fn rows(z: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), z.ncols(), |r, c| z[(idx[r], c)])
}
