//! L1-penalized additive hazards regression.
//!
//! The additive hazards partial loss is exactly quadratic,
//! `½ b'H_n b − b'h_n` with
//!
//! ```text
//! H_n = n⁻¹ Σ_i ∫_0^τ {W_i − W̄(t)}^{⊗2} Y_i(t) dt
//! h_n = n⁻¹ Σ_i ∫_0^τ {W_i − W̄(t)} dN_i(t)
//! ```
//!
//! where `W_i = (D_i, Z_i)` (or `Z_i` alone) and `W̄(t)` is the at-risk mean.
//! Between consecutive observed times the risk set is constant, so both
//! integrals are finite sums over segments and no quadrature is involved.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{RiskSetIndex, SurvivalDataset};
use crate::error::{Error, Result};
use crate::folds::FoldPlan;
use crate::lasso::{self, CdControl, Gram};

/// The quadratic form of the additive hazards loss, with columns of `H_n`
/// computed on first use.
#[derive(Debug)]
pub struct AhazQuadratic {
    n: usize,
    include_treatment: bool,
    /// Design shifted by the first subject's row (centering removes the shift).
    design: DMatrix<f64>,
    times: DVector<f64>,
    /// Risk-set sums of the shifted design, one row per distinct time.
    risk_sums: DMatrix<f64>,
    /// Segment length over risk-set size.
    seg_weight: DVector<f64>,
    diag: Vec<f64>,
    linear: Vec<f64>,
    columns: Vec<OnceLock<Vec<f64>>>,
}

impl AhazQuadratic {
    /// Builds `H_n`, `h_n` for `data`. With `include_treatment` the first
    /// coordinate is the treatment and the remaining `p` are the covariates.
    pub fn build(data: &SurvivalDataset, index: &RiskSetIndex, include_treatment: bool) -> Result<Self> {
        let n = data.n();
        let p = data.p();
        if index.n() != n {
            return Err(Error::InvalidData("risk index does not match dataset".into()));
        }
        let m = index.n_groups();
        if m == 1 && !data.events().iter().any(|&e| e) {
            return Err(Error::DegenerateDesign(
                "all subjects share one time and no events exist".into(),
            ));
        }
        let off = usize::from(include_treatment);
        let dim = p + off;
        let z = data.covariates();
        let design = DMatrix::from_fn(n, dim, |i, j| {
            if include_treatment && j == 0 {
                data.treatment(i) - data.treatment(0)
            } else {
                z[(i, j - off)] - z[(0, j - off)]
            }
        });
        let times = DVector::from_column_slice(data.times());

        let mut risk_sums = DMatrix::zeros(m, dim);
        for j in 0..dim {
            let col = design.column(j);
            let mut acc = 0.0;
            for g in (0..m).rev() {
                for &i in index.group(g) {
                    acc += col[i];
                }
                risk_sums[(g, j)] = acc;
            }
        }
        let counts = index.at_risk_counts();
        let seg_weight =
            DVector::from_fn(m, |g, _| index.segment_length(g) / counts[g] as f64);

        let nf = n as f64;
        let mut diag = vec![0.0; dim];
        let mut linear = vec![0.0; dim];
        let ev = index.event_counts();
        for j in 0..dim {
            let col = design.column(j);
            let mut a = 0.0;
            for i in 0..n {
                a += times[i] * col[i] * col[i];
            }
            let mut b = 0.0;
            let mut lin = 0.0;
            for g in 0..m {
                let s = risk_sums[(g, j)];
                b += seg_weight[g] * s * s;
                if ev[g] > 0 {
                    let mean = s / counts[g] as f64;
                    for &i in index.group(g) {
                        if data.events()[i] {
                            lin += col[i] - mean;
                        }
                    }
                }
            }
            diag[j] = ((a - b) / nf).max(0.0);
            linear[j] = lin / nf;
        }
        Ok(Self {
            n,
            include_treatment,
            design,
            times,
            risk_sums,
            seg_weight,
            diag,
            linear,
            columns: (0..dim).map(|_| OnceLock::new()).collect(),
        })
    }

    /// Convenience wrapper building the risk index.
    pub fn from_data(data: &SurvivalDataset, include_treatment: bool) -> Result<Self> {
        Self::build(data, &RiskSetIndex::new(data), include_treatment)
    }

    pub fn includes_treatment(&self) -> bool {
        self.include_treatment
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn compute_column(&self, j: usize) -> Vec<f64> {
        let xw = self.design.column(j).component_mul(&self.times);
        let a = self.design.tr_mul(&xw);
        let sw = self.risk_sums.column(j).component_mul(&self.seg_weight);
        let b = self.risk_sums.tr_mul(&sw);
        let nf = self.n as f64;
        let mut col: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| (x - y) / nf).collect();
        col[j] = self.diag[j];
        col
    }

    /// Dense symmetric `H_n`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut h = DMatrix::from_fn(d, d, |r, c| self.column(c)[r]);
        for r in 0..d {
            for c in (r + 1)..d {
                let v = 0.5 * (h[(r, c)] + h[(c, r)]);
                h[(r, c)] = v;
                h[(c, r)] = v;
            }
        }
        h
    }
}

impl Gram for AhazQuadratic {
    fn dim(&self) -> usize {
        self.diag.len()
    }
    fn diag(&self) -> &[f64] {
        &self.diag
    }
    fn linear(&self) -> &[f64] {
        &self.linear
    }
    fn column(&self, j: usize) -> &[f64] {
        self.columns[j].get_or_init(|| self.compute_column(j))
    }
}

/// `(b'H b, b'h)` on `data` for a design coefficient vector `coef` (length
/// `p + 1` when `include_treatment`), using `data`'s own risk-set centering.
/// This is the held-out loss used by cross-validation.
pub fn quadratic_at(
    data: &SurvivalDataset,
    index: &RiskSetIndex,
    include_treatment: bool,
    coef: &[f64],
) -> (f64, f64) {
    let off = usize::from(include_treatment);
    assert_eq!(coef.len(), data.p() + off);
    let mut score = data.linear_predictor(&coef[off..]);
    if include_treatment {
        for (i, s) in score.iter_mut().enumerate() {
            *s += coef[0] * data.treatment(i);
        }
    }
    projected_quadratic(data, index, &score)
}

/// `(b'Hb, b'h)` where `score_i = W_i'b` has already been formed.
pub fn projected_quadratic(data: &SurvivalDataset, index: &RiskSetIndex, score: &[f64]) -> (f64, f64) {
    let n = data.n();
    let shift = score.iter().sum::<f64>() / n as f64;
    let counts = index.at_risk_counts();
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    let mut quad = 0.0;
    let mut lin = 0.0;
    for g in (0..index.n_groups()).rev() {
        for &i in index.group(g) {
            let z = score[i] - shift;
            s1 += z;
            s2 += z * z;
        }
        let r = counts[g] as f64;
        let mean = s1 / r;
        quad += index.segment_length(g) * (s2 - s1 * mean).max(0.0);
        for &i in index.group(g) {
            if data.events()[i] {
                lin += score[i] - shift - mean;
            }
        }
    }
    (quad / n as f64, lin / n as f64)
}

/// A penalized additive hazards fit.
#[derive(Debug, Clone, PartialEq)]
pub struct AhazLassoFit {
    /// Treatment coefficient, when the design includes the treatment.
    pub theta_l: Option<f64>,
    pub beta: Vec<f64>,
    pub lambda: f64,
    /// Indices into `beta` with nonzero coefficients.
    pub active_set: Vec<usize>,
    /// `½ b'Hb − b'h + λ‖b_pen‖₁` at the solution.
    pub objective: f64,
    pub sweeps: usize,
    /// Design coordinates with a zero diagonal, held at zero.
    pub pinned: Vec<usize>,
}

impl AhazLassoFit {
    /// Full design coefficient vector `(θ_l, β)` or `β`.
    pub fn coef(&self) -> Vec<f64> {
        let mut c = Vec::with_capacity(self.beta.len() + 1);
        if let Some(t) = self.theta_l {
            c.push(t);
        }
        c.extend_from_slice(&self.beta);
        c
    }

    fn from_solution(sol: lasso::QuadSolution, lambda: f64, include_treatment: bool) -> Self {
        let (theta_l, beta) = if include_treatment {
            (Some(sol.coef[0]), sol.coef[1..].to_vec())
        } else {
            (None, sol.coef)
        };
        let active_set = beta
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(j, _)| j)
            .collect();
        Self {
            theta_l,
            beta,
            lambda,
            active_set,
            objective: sol.objective,
            sweeps: sol.sweeps,
            pinned: sol.pinned,
        }
    }
}

fn penalty_mask(q: &AhazQuadratic, penalize_treatment: bool) -> Vec<bool> {
    let mut m = vec![true; q.dim()];
    if q.include_treatment && !penalize_treatment {
        m[0] = false;
    }
    m
}

/// Coordinate-descent fit at a single penalty.
///
/// The objective is `½ b'H_n b − b'h_n + λ‖b_pen‖₁`, so `λ ≥ ‖h_n‖_∞`
/// gives the zero solution when every coordinate is penalized. With
/// `penalize_treatment = false` the treatment coefficient is left free.
pub fn fit_lasso(
    q: &AhazQuadratic,
    lambda: f64,
    penalize_treatment: bool,
    init: Option<&[f64]>,
) -> Result<AhazLassoFit> {
    let mask = penalty_mask(q, penalize_treatment);
    let sol = lasso::solve(q, lambda, &mask, init, CdControl::default())?;
    Ok(AhazLassoFit::from_solution(sol, lambda, q.include_treatment))
}

/// Largest KKT violation of `fit` for `q`.
pub fn kkt_violation(q: &AhazQuadratic, fit: &AhazLassoFit, penalize_treatment: bool) -> f64 {
    lasso::kkt_violation(q, &fit.coef(), fit.lambda, &penalty_mask(q, penalize_treatment))
}

/// Penalty at which all penalized coefficients vanish.
pub fn lambda_max(q: &AhazQuadratic, penalize_treatment: bool) -> Result<f64> {
    Ok(lasso::lambda_max(q, &penalty_mask(q, penalize_treatment))?.0)
}

/// Warm-started fits along a given decreasing grid.
pub fn fit_grid(q: &AhazQuadratic, grid: &[f64], penalize_treatment: bool) -> Result<Vec<AhazLassoFit>> {
    let mask = penalty_mask(q, penalize_treatment);
    let mut out = Vec::with_capacity(grid.len());
    let mut warm: Option<Vec<f64>> = None;
    for &lambda in grid {
        let sol = lasso::solve(q, lambda, &mask, warm.as_deref(), CdControl::default())?;
        warm = Some(sol.coef.clone());
        out.push(AhazLassoFit::from_solution(sol, lambda, q.include_treatment));
    }
    Ok(out)
}

/// Regularization path on a geometric grid from `λ_max` to `λ_max · ratio`.
pub fn lasso_path(
    q: &AhazQuadratic,
    n_lambdas: usize,
    lambda_min_ratio: f64,
    penalize_treatment: bool,
) -> Result<Vec<AhazLassoFit>> {
    if n_lambdas < 2 {
        return Err(Error::InvalidConfig("n_lambdas must be at least 2".into()));
    }
    let lmax = lambda_max(q, penalize_treatment)?;
    fit_grid(q, &lasso::geometric_grid(lmax, n_lambdas, lambda_min_ratio), penalize_treatment)
}

/// Options for penalty selection by cross-validation.
#[derive(Debug, Clone, Copy)]
pub struct AhazCvConfig {
    pub folds: usize,
    pub n_lambdas: usize,
    pub lambda_min_ratio: f64,
    pub include_treatment: bool,
    pub penalize_treatment: bool,
    pub seed: u64,
}

impl Default for AhazCvConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            n_lambdas: 100,
            lambda_min_ratio: 0.05,
            include_treatment: false,
            penalize_treatment: true,
            seed: 1,
        }
    }
}

/// Outcome of cross-validated penalty selection.
#[derive(Debug, Clone)]
pub struct AhazCvResult {
    pub lambda_star: f64,
    pub fit: AhazLassoFit,
    pub grid: Vec<f64>,
    /// Held-out loss summed over folds, per grid value.
    pub cv_loss: Vec<f64>,
}

/// Selects `λ` by minimising the summed held-out loss `b'H^{test}b − 2b'h^{test}`,
/// each fold centred by its own risk sets, then refits on all of `data`.
pub fn select_lambda_cv(data: &SurvivalDataset, cfg: &AhazCvConfig) -> Result<AhazCvResult> {
    let index = RiskSetIndex::new(data);
    let q = AhazQuadratic::build(data, &index, cfg.include_treatment)?;
    let lmax = lambda_max(&q, cfg.penalize_treatment)?;
    let grid = lasso::geometric_grid(lmax, cfg.n_lambdas.max(2), cfg.lambda_min_ratio);
    let plan = FoldPlan::stratified(data.treatments(), cfg.folds, cfg.seed)?;
    for j in 0..plan.k() {
        let size = plan.n() - plan.in_fold(j).len();
        if size < 2 {
            return Err(Error::FoldTooSmall { fold: j, size });
        }
    }
    let per_fold: Vec<Vec<f64>> = (0..plan.k())
        .into_par_iter()
        .map(|j| -> Result<Vec<f64>> {
            let train = data.subset(&plan.out_of_fold(j));
            let test = data.subset(&plan.in_fold(j));
            let tq = AhazQuadratic::from_data(&train, cfg.include_treatment)?;
            let fits = fit_grid(&tq, &grid, cfg.penalize_treatment)?;
            let tindex = RiskSetIndex::new(&test);
            Ok(fits
                .iter()
                .map(|f| {
                    let (quad, lin) = quadratic_at(&test, &tindex, cfg.include_treatment, &f.coef());
                    quad - 2.0 * lin
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut cv_loss = vec![0.0; grid.len()];
    for losses in &per_fold {
        for (acc, l) in cv_loss.iter_mut().zip(losses) {
            *acc += l;
        }
    }
    let best = argmin(&cv_loss);
    let fits = fit_grid(&q, &grid[..=best], cfg.penalize_treatment)?;
    let fit = fits.into_iter().last().expect("non-empty grid");
    Ok(AhazCvResult {
        lambda_star: grid[best],
        fit,
        grid,
        cv_loss,
    })
}

/// First index of the minimum.
pub(crate) fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}
