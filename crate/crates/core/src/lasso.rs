//! Cyclic coordinate descent for L1-penalized quadratic objectives
//! `½ b'Hb − b'h + λ Σ_j pen_j |b_j|` with `H` positive semi-definite.
//!
//! The solver only touches columns of `H` for coordinates that move, so
//! implicit Gram matrices whose columns are computed on demand stay cheap
//! along sparse regularization paths.

use crate::error::{Error, Result};

/// Access to a positive semi-definite quadratic form.
pub trait Gram: Sync {
    fn dim(&self) -> usize;
    fn diag(&self) -> &[f64];
    /// The linear term `h`.
    fn linear(&self) -> &[f64];
    /// Column `j` of `H`.
    fn column(&self, j: usize) -> &[f64];
}

/// A fully materialised quadratic form.
#[derive(Debug, Clone)]
pub struct DenseQuadratic {
    dim: usize,
    cols: Vec<Vec<f64>>,
    diag: Vec<f64>,
    linear: Vec<f64>,
}

impl DenseQuadratic {
    /// `h_mat` is given column-major as `dim` columns of length `dim`.
    pub fn new(cols: Vec<Vec<f64>>, linear: Vec<f64>) -> Self {
        let dim = linear.len();
        assert_eq!(cols.len(), dim);
        let diag = (0..dim).map(|j| cols[j][j]).collect();
        Self {
            dim,
            cols,
            diag,
            linear,
        }
    }

    pub fn from_matrix(h: &nalgebra::DMatrix<f64>, linear: Vec<f64>) -> Self {
        let cols = (0..h.ncols()).map(|j| h.column(j).iter().cloned().collect()).collect();
        Self::new(cols, linear)
    }
}

impl Gram for DenseQuadratic {
    fn dim(&self) -> usize {
        self.dim
    }
    fn diag(&self) -> &[f64] {
        &self.diag
    }
    fn linear(&self) -> &[f64] {
        &self.linear
    }
    fn column(&self, j: usize) -> &[f64] {
        &self.cols[j]
    }
}

/// Stopping rule for coordinate descent.
#[derive(Debug, Clone, Copy)]
pub struct CdControl {
    /// Converged when the largest coordinate change in a full sweep is below this.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for CdControl {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_sweeps: 10_000,
        }
    }
}

/// Result of [`solve`].
#[derive(Debug, Clone)]
pub struct QuadSolution {
    pub coef: Vec<f64>,
    /// Gradient `Hb − h` at `coef`.
    pub gradient: Vec<f64>,
    pub objective: f64,
    pub sweeps: usize,
    /// Coordinates with a vanishing diagonal, held at zero.
    pub pinned: Vec<usize>,
}

#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

fn pinned_coords<Q: Gram + ?Sized>(q: &Q) -> Vec<bool> {
    let d = q.diag();
    let scale = d.iter().cloned().fold(0.0_f64, f64::max);
    d.iter().map(|&v| v <= f64::EPSILON * scale.max(f64::MIN_POSITIVE)).collect()
}

/// `Hb − h` computed from scratch.
pub fn gradient<Q: Gram + ?Sized>(q: &Q, coef: &[f64]) -> Vec<f64> {
    let mut g: Vec<f64> = q.linear().iter().map(|v| -v).collect();
    for (k, &b) in coef.iter().enumerate() {
        if b != 0.0 {
            for (gi, c) in g.iter_mut().zip(q.column(k)) {
                *gi += b * c;
            }
        }
    }
    g
}

/// `½ b'Hb − b'h`, using a gradient consistent with `coef`.
pub fn smooth_loss(linear: &[f64], coef: &[f64], grad: &[f64]) -> f64 {
    // b'Hb = b'(g + h)
    coef.iter()
        .zip(grad.iter().zip(linear))
        .map(|(b, (g, h))| 0.5 * b * (g + h) - b * h)
        .sum()
}

fn penalty(coef: &[f64], lambda: f64, penalized: &[bool]) -> f64 {
    if lambda == 0.0 || lambda.is_infinite() {
        return 0.0;
    }
    coef.iter()
        .zip(penalized)
        .filter(|(_, &p)| p)
        .map(|(b, _)| b.abs())
        .sum::<f64>()
        * lambda
}

/// Minimises `½ b'Hb − b'h + λ Σ_{penalized} |b_j|`.
///
/// `lambda = ∞` fits the unpenalized coordinates only.
pub fn solve<Q: Gram + ?Sized>(
    q: &Q,
    lambda: f64,
    penalized: &[bool],
    init: Option<&[f64]>,
    ctl: CdControl,
) -> Result<QuadSolution> {
    let p = q.dim();
    assert_eq!(penalized.len(), p);
    assert!(lambda >= 0.0, "lambda must be nonnegative");
    let pinned = pinned_coords(q);
    let mut coef = match init {
        Some(b) => {
            assert_eq!(b.len(), p);
            b.iter()
                .zip(&pinned)
                .map(|(&v, &z)| if z { 0.0 } else { v })
                .collect()
        }
        None => vec![0.0; p],
    };
    let mut grad = gradient(q, &coef);
    let diag = q.diag();
    let thresholds: Vec<f64> = penalized
        .iter()
        .map(|&pen| if pen { lambda } else { 0.0 })
        .collect();

    let mut objective = smooth_loss(q.linear(), &coef, &grad) + penalty(&coef, lambda, penalized);
    let mut sweeps = 0;
    let mut newton_ok = true;

    let update = |j: usize, coef: &mut [f64], grad: &mut [f64]| -> f64 {
        let old = coef[j];
        let z = diag[j] * old - grad[j];
        let new = soft_threshold(z, thresholds[j]) / diag[j];
        let delta = new - old;
        if delta != 0.0 {
            coef[j] = new;
            for (g, c) in grad.iter_mut().zip(q.column(j)) {
                *g += delta * c;
            }
        }
        delta.abs()
    };

    loop {
        // full sweep
        let mut max_change = 0.0_f64;
        for j in 0..p {
            if !pinned[j] {
                max_change = max_change.max(update(j, &mut coef, &mut grad));
            }
        }
        sweeps += 1;
        check_descent(q, &coef, &grad, lambda, penalized, &mut objective);
        if max_change < ctl.tol {
            break;
        }
        // sweeps restricted to the active set
        let active: Vec<usize> = (0..p)
            .filter(|&j| !pinned[j] && (coef[j] != 0.0 || !penalized[j]))
            .collect();
        let mut inner_sweeps = 0;
        loop {
            if sweeps >= ctl.max_sweeps {
                return Err(Error::NoConvergence {
                    sweeps,
                    max_change,
                });
            }
            let mut inner = 0.0_f64;
            for &j in &active {
                inner = inner.max(update(j, &mut coef, &mut grad));
            }
            sweeps += 1;
            inner_sweeps += 1;
            check_descent(q, &coef, &grad, lambda, penalized, &mut objective);
            if inner < ctl.tol {
                break;
            }
            if newton_ok && inner_sweeps % NEWTON_EVERY == 0 {
                match newton_step(q, &mut coef, &mut grad, &thresholds, &pinned) {
                    Step::Full => break,
                    Step::Truncated => {}
                    Step::Failed => newton_ok = false,
                }
                check_descent(q, &coef, &grad, lambda, penalized, &mut objective);
            }
        }
        if sweeps >= ctl.max_sweeps {
            return Err(Error::NoConvergence {
                sweeps,
                max_change,
            });
        }
    }
    let objective = smooth_loss(q.linear(), &coef, &grad) + penalty(&coef, lambda, penalized);
    Ok(QuadSolution {
        coef,
        gradient: grad,
        objective,
        sweeps,
        pinned: (0..p).filter(|&j| pinned[j]).collect(),
    })
}

/// Active coordinate sweeps between attempts at an exact active-set step.
const NEWTON_EVERY: usize = 1;

/// Jumps to the minimiser of the objective restricted to the current active
/// set and sign pattern, stopping early where a coefficient would cross zero.
/// Fails when `H_AA` is not numerically positive definite or the step does
/// not lower the objective; `coef` and `grad` are then unchanged.
fn newton_step<Q: Gram + ?Sized>(
    q: &Q,
    coef: &mut [f64],
    grad: &mut [f64],
    thresholds: &[f64],
    pinned: &[bool],
) -> Step {
    let active: Vec<usize> = (0..coef.len())
        .filter(|&j| !pinned[j] && (coef[j] != 0.0 || thresholds[j] == 0.0))
        .collect();
    let m = active.len();
    if m == 0 {
        return Step::Full;
    }
    let h_aa = nalgebra::DMatrix::from_fn(m, m, |r, c| {
        let a = q.column(active[r])[active[c]];
        let b = q.column(active[c])[active[r]];
        0.5 * (a + b)
    });
    let Some(chol) = h_aa.cholesky() else {
        return Step::Failed;
    };
    // target: g_A + λ s_A = 0
    let rhs = nalgebra::DVector::from_fn(m, |r, _| {
        let j = active[r];
        -(grad[j] + thresholds[j] * coef[j].signum())
    });
    let dx = chol.solve(&rhs);
    if dx.iter().any(|v| !v.is_finite()) {
        return Step::Failed;
    }
    let mut t = 1.0_f64;
    for (r, &j) in active.iter().enumerate() {
        if thresholds[j] > 0.0 && coef[j] * (coef[j] + dx[r]) < 0.0 {
            t = t.min(-coef[j] / dx[r]);
        }
    }
    let before = smooth_loss(q.linear(), coef, grad) + l1(coef, thresholds);
    let old_coef = coef.to_vec();
    let old_grad = grad.to_vec();
    for (r, &j) in active.iter().enumerate() {
        let mut new = old_coef[j] + t * dx[r];
        if thresholds[j] > 0.0 && new * old_coef[j] <= 0.0 {
            new = 0.0;
        }
        let delta = new - old_coef[j];
        if delta != 0.0 {
            coef[j] = new;
            for (g, c) in grad.iter_mut().zip(q.column(j)) {
                *g += delta * c;
            }
        }
    }
    let after = smooth_loss(q.linear(), coef, grad) + l1(coef, thresholds);
    if after > before {
        coef.copy_from_slice(&old_coef);
        grad.copy_from_slice(&old_grad);
        Step::Failed
    } else if t < 1.0 {
        Step::Truncated
    } else {
        Step::Full
    }
}

enum Step {
    Full,
    Truncated,
    Failed,
}

fn l1(coef: &[f64], thresholds: &[f64]) -> f64 {
    coef.iter().zip(thresholds).map(|(b, t)| t * b.abs()).sum()
}

#[inline]
fn check_descent<Q: Gram + ?Sized>(
    q: &Q,
    coef: &[f64],
    grad: &[f64],
    lambda: f64,
    penalized: &[bool],
    objective: &mut f64,
) {
    if cfg!(debug_assertions) {
        let now = smooth_loss(q.linear(), coef, grad) + penalty(coef, lambda, penalized);
        let slack = 1e-10 * (1.0 + now.abs());
        debug_assert!(
            now <= *objective + slack,
            "coordinate descent increased the objective: {} -> {}",
            *objective,
            now
        );
        *objective = now;
    }
}

/// Largest violation of the optimality conditions at `coef` (gradient recomputed).
pub fn kkt_violation<Q: Gram + ?Sized>(
    q: &Q,
    coef: &[f64],
    lambda: f64,
    penalized: &[bool],
) -> f64 {
    let g = gradient(q, coef);
    let pinned = pinned_coords(q);
    let mut worst = 0.0_f64;
    for j in 0..q.dim() {
        if pinned[j] {
            continue;
        }
        let v = if !penalized[j] {
            g[j].abs()
        } else if coef[j] == 0.0 {
            (g[j].abs() - lambda).max(0.0)
        } else {
            (g[j] + lambda * coef[j].signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Smallest penalty at which every penalized coordinate is zero.
pub fn lambda_max<Q: Gram + ?Sized>(q: &Q, penalized: &[bool]) -> Result<(f64, QuadSolution)> {
    let base = solve(q, f64::INFINITY, penalized, None, CdControl::default())?;
    let lmax = base
        .gradient
        .iter()
        .zip(penalized)
        .zip(q.diag())
        .filter(|((_, &pen), _)| pen)
        .filter(|(_, &d)| d > 0.0)
        .map(|((g, _), _)| g.abs())
        .fold(0.0_f64, f64::max);
    Ok((lmax, base))
}

/// Geometric grid from `lmax` down to `lmax * ratio`.
pub fn geometric_grid(lmax: f64, n_lambdas: usize, ratio: f64) -> Vec<f64> {
    assert!(n_lambdas >= 2);
    (0..n_lambdas)
        .map(|k| lmax * ratio.powf(k as f64 / (n_lambdas - 1) as f64))
        .collect()
}
