//! The orthogonal score for the treatment effect, its root and the
//! closed-form variance.
//!
//! For subject `i` with propensity `π_i` the score contribution is
//! `(D_i − π_i) ∫_0^τ e^{D_i θ t} dM_i(t; θ, β, Λ̂(·; θ))` with
//! `dM_i = dN_i − Y_i {(D_i θ + β'Z_i) dt + dΛ̂(t; θ)}`. Every integral is
//! taken in closed form over the segments of `Λ̂`.

use crate::baseline::{propensities, BaselineEstimate};
use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::report::{Method, TreatmentEffectReport};

/// Largest admissible `|θ| τ` before `e^{θt}` overflows.
pub const OVERFLOW_GUARD: f64 = 700.0;
/// Initial half-width of the root bracket in units of `1/τ`.
pub const BRACKET_K: f64 = 20.0;
pub const BRACKET_DOUBLINGS: usize = 3;
const SCAN_POINTS: usize = 81;

/// `∫_0^x e^{θt} dt`.
#[inline]
pub(crate) fn exp_integral(theta: f64, x: f64) -> f64 {
    if theta == 0.0 || x == 0.0 {
        x
    } else {
        (theta * x).exp_m1() / theta
    }
}

/// One block of subjects sharing a set of nuisance estimates.
#[derive(Debug, Clone)]
pub struct ScoreTerm {
    times: Vec<f64>,
    events: Vec<bool>,
    treated: Vec<bool>,
    ps: Vec<f64>,
    beta_z: Vec<f64>,
    /// Knot count `≤ X_i` for each subject.
    full: Vec<usize>,
    baseline: BaselineEstimate,
    /// Multiplier applied to this block's mean contribution.
    weight: f64,
}

impl ScoreTerm {
    /// Subjects `idx` of `data`, nuisances `β`, `γ` and the baseline estimate.
    pub fn new(
        data: &SurvivalDataset,
        idx: &[usize],
        beta: &[f64],
        gamma: &[f64],
        baseline: BaselineEstimate,
        weight: f64,
    ) -> Result<Self> {
        let ps_all = propensities(data, gamma);
        let bz_all = data.linear_predictor(beta);
        let ps: Vec<f64> = idx.iter().map(|&i| ps_all[i]).collect();
        if ps.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::InvalidData("propensities must lie in (0, 1)".into()));
        }
        let times: Vec<f64> = idx.iter().map(|&i| data.time(i)).collect();
        let full = times
            .iter()
            .map(|&x| baseline.knots().partition_point(|&u| u <= x))
            .collect();
        Ok(Self {
            events: idx.iter().map(|&i| data.events()[i]).collect(),
            treated: idx.iter().map(|&i| data.treatments()[i]).collect(),
            beta_z: idx.iter().map(|&i| bz_all[i]).collect(),
            ps,
            times,
            full,
            baseline,
            weight,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn propensities(&self) -> &[f64] {
        &self.ps
    }

    /// Mean contribution over the block (unweighted).
    pub fn mean_score(&self, theta: f64) -> f64 {
        let b = &self.baseline;
        let knots = b.knots();
        let m = knots.len();
        // G_g = ∫_0^{u_g} e^{θt} dΛ̂(t; θ)
        let mut g_cum = Vec::with_capacity(m);
        let mut acc = 0.0;
        for g in 0..m {
            let s = b.segment_start(g);
            let dens = b.drift_a()[g] - theta * b.drift_b()[g];
            acc += dens * (theta * s).exp() * exp_integral(theta, knots[g] - s)
                + (theta * knots[g]).exp() * b.jumps()[g];
            g_cum.push(acc);
        }
        let mut total = 0.0;
        for i in 0..self.len() {
            let x = self.times[i];
            let f = self.full[i];
            let delta = if self.events[i] { 1.0 } else { 0.0 };
            let contrib = if self.treated[i] {
                let mut g = if f == 0 { 0.0 } else { g_cum[f - 1] };
                if f < m {
                    let s = b.segment_start(f);
                    let dens = b.drift_a()[f] - theta * b.drift_b()[f];
                    g += dens * (theta * s).exp() * exp_integral(theta, (x - s).max(0.0));
                }
                (1.0 - self.ps[i])
                    * (delta * (theta * x).exp() - (theta + self.beta_z[i]) * exp_integral(theta, x) - g)
            } else {
                -self.ps[i] * (delta - self.beta_z[i] * x - b.eval(x, theta))
            };
            total += contrib;
        }
        total / self.len() as f64
    }
}

/// The full estimating function: a weighted sum of block means.
#[derive(Debug, Clone)]
pub struct ScoreContext {
    terms: Vec<ScoreTerm>,
    tau: f64,
    n: usize,
    p: usize,
}

impl ScoreContext {
    /// One-shot context: every subject, one set of nuisances.
    pub fn one_shot(
        data: &SurvivalDataset,
        beta: &[f64],
        gamma: &[f64],
        baseline: BaselineEstimate,
    ) -> Result<Self> {
        let idx: Vec<usize> = (0..data.n()).collect();
        let term = ScoreTerm::new(data, &idx, beta, gamma, baseline, 1.0)?;
        Ok(Self::from_terms(vec![term], data.tau(), data.p()))
    }

    pub fn from_terms(terms: Vec<ScoreTerm>, tau: f64, p: usize) -> Self {
        let n = terms.iter().map(|t| t.len()).sum();
        Self { terms, tau, n, p }
    }

    pub fn terms(&self) -> &[ScoreTerm] {
        &self.terms
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// All fitted propensities across blocks.
    pub fn propensity_range(&self) -> (f64, f64) {
        self.terms
            .iter()
            .flat_map(|t| t.ps.iter())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| {
                (lo.min(p), hi.max(p))
            })
    }
}

/// `φ(θ)`.
pub fn evaluate_score(ctx: &ScoreContext, theta: f64) -> Result<f64> {
    let guard = theta.abs() * ctx.tau;
    if !(guard <= OVERFLOW_GUARD) {
        return Err(Error::Overflow(guard));
    }
    Ok(ctx
        .terms
        .iter()
        .filter(|t| !t.is_empty())
        .map(|t| t.weight * t.mean_score(theta))
        .sum())
}

/// Brent's method on a bracket with a sign change.
fn brent(f: &dyn Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64) -> Result<f64> {
    const FTOL: f64 = 1e-12;
    const XTOL: f64 = 1e-12;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..500 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * XTOL;
        let m = 0.5 * (c - b);
        if fb.abs() < FTOL || m.abs() <= tol {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (2.0 * m * s, 1.0 - s)
            } else {
                let q = fa / fc;
                let r = fb / fc;
                (
                    s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0)),
                    (q - 1.0) * (r - 1.0) * (s - 1.0),
                )
            };
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol * m.signum() };
        fb = f(b)?;
    }
    Ok(b)
}

/// Finds a root of `φ`: scans `[−K/τ, K/τ]` for sign changes (doubling `K`
/// up to three times), takes the sign change nearest zero and refines it.
pub fn find_root(ctx: &ScoreContext) -> Result<f64> {
    let f = |t: f64| evaluate_score(ctx, t);
    let mut k = BRACKET_K;
    let mut last = (0.0, 0.0);
    for _ in 0..=BRACKET_DOUBLINGS {
        let half = k / ctx.tau;
        let grid: Vec<f64> = (0..SCAN_POINTS)
            .map(|s| -half + 2.0 * half * s as f64 / (SCAN_POINTS - 1) as f64)
            .collect();
        let vals: Vec<f64> = grid.iter().map(|&t| f(t)).collect::<Result<_>>()?;
        let mut best: Option<usize> = None;
        for s in 0..SCAN_POINTS - 1 {
            if vals[s] == 0.0 || vals[s].signum() != vals[s + 1].signum() {
                let mid = 0.5 * (grid[s] + grid[s + 1]).abs();
                if best.map_or(true, |b| mid < 0.5 * (grid[b] + grid[b + 1]).abs()) {
                    best = Some(s);
                }
            }
        }
        if let Some(s) = best {
            return brent(&f, grid[s], grid[s + 1], vals[s], vals[s + 1]);
        }
        last = (-half, half);
        k *= 2.0;
    }
    Err(Error::NoRootInBracket {
        low: last.0,
        high: last.1,
    })
}

/// Closed-form variance `σ̂²` for subjects with times `x`, events, treatment
/// and propensities `π`.
pub fn sandwich_sigma2(
    times: &[f64],
    events: &[bool],
    treated: &[bool],
    ps: &[f64],
    theta: f64,
) -> Result<f64> {
    let n = times.len() as f64;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..times.len() {
        let d = if treated[i] { 1.0 } else { 0.0 };
        if events[i] {
            let r = d - ps[i];
            num += r * r * (2.0 * theta * d * times[i]).exp();
        }
        den += (1.0 - d) * ps[i] * times[i];
    }
    num /= n;
    den /= n;
    if !(den > 0.0) {
        return Err(Error::ZeroDenominator(
            "Σ(1 − D_i) π_i X_i = 0: no effective controls".into(),
        ));
    }
    Ok(num / (den * den))
}

/// Variance over all blocks of a context, each subject with its block's `π`.
pub fn context_sigma2(ctx: &ScoreContext, theta: f64) -> Result<f64> {
    let mut x = Vec::with_capacity(ctx.n);
    let mut e = Vec::with_capacity(ctx.n);
    let mut d = Vec::with_capacity(ctx.n);
    let mut ps = Vec::with_capacity(ctx.n);
    for t in &ctx.terms {
        x.extend_from_slice(&t.times);
        e.extend_from_slice(&t.events);
        d.extend_from_slice(&t.treated);
        ps.extend_from_slice(&t.ps);
    }
    sandwich_sigma2(&x, &e, &d, &ps, theta)
}

/// Solves `φ(θ) = 0` and attaches the closed-form standard error.
pub fn solve_theta(ctx: &ScoreContext, method: Method) -> Result<TreatmentEffectReport> {
    let theta = find_root(ctx)?;
    let sigma2 = context_sigma2(ctx, theta)?;
    let se = (sigma2 / ctx.n as f64).sqrt();
    let (ps_min, ps_max) = ctx.propensity_range();
    let mut report = TreatmentEffectReport::new(method, theta, se, ctx.n, ctx.p)?;
    report.ps_min = Some(ps_min);
    report.ps_max = Some(ps_max);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_integral_limits() {
        assert_eq!(exp_integral(0.0, 2.0), 2.0);
        assert!((exp_integral(1e-12, 2.0) - 2.0).abs() < 1e-10);
        assert!((exp_integral(0.5, 2.0) - (1f64.exp() - 1.0) / 0.5).abs() < 1e-14);
    }

    #[test]
    fn brent_finds_simple_root() {
        let f = |x: f64| Ok(x * x * x - 0.125);
        let r = brent(&f, 0.0, 2.0, -0.125, 7.875).unwrap();
        assert!((r - 0.5).abs() < 1e-11);
    }
}
