//! Random instances and brute-force reference computations shared by the
//! integration tests. Nothing here calls into the estimators being checked.

#![allow(dead_code)]

use hazdiff::SurvivalDataset;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random censored cohort with both arms present. With `ties` the times are
/// rounded to a coarse grid so tied times are common.
pub fn random_dataset(seed: u64, n: usize, p: usize, ties: bool) -> SurvivalDataset {
    let mut r = rng(seed);
    let exp = Exp::new(1.0).unwrap();
    let mut times: Vec<f64> = (0..n)
        .map(|_| {
            let t: f64 = exp.sample(&mut r) + 0.01;
            if ties {
                (t * 4.0).ceil() / 4.0
            } else {
                t
            }
        })
        .collect();
    let events: Vec<bool> = (0..n).map(|_| r.random::<f64>() < 0.7).collect();
    let mut treatments: Vec<bool> = (0..n).map(|_| r.random::<bool>()).collect();
    treatments[0] = true;
    treatments[1] = false;
    let z = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut r));
    times.iter_mut().for_each(|t| *t = (*t * 1e6).round() / 1e6);
    SurvivalDataset::new(times, events, treatments, z, None).unwrap()
}

/// As [`random_dataset`] but the subject with the largest time is treated,
/// so the treated arm is at risk over the whole follow-up.
pub fn treated_last_dataset(seed: u64, n: usize, p: usize, ties: bool) -> SurvivalDataset {
    let d = random_dataset(seed, n, p, ties);
    let tmax = d.times().iter().cloned().fold(0.0, f64::max);
    let mut tr = d.treatments().to_vec();
    for i in 0..d.n() {
        if d.time(i) == tmax {
            tr[i] = true;
        }
    }
    if tr.iter().all(|&x| x) {
        let i = (0..d.n()).find(|&i| d.time(i) < tmax).unwrap();
        tr[i] = false;
    }
    d.with_treatments(tr).unwrap()
}

pub fn normal_vec(seed: u64, len: usize, scale: f64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            scale * z
        })
        .collect::<Vec<f64>>()
}

pub fn expit(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn propensity(d: &SurvivalDataset, gamma: &[f64]) -> Vec<f64> {
    let z = d.covariates();
    (0..d.n())
        .map(|i| expit(gamma[0] + (0..d.p()).map(|j| gamma[j + 1] * z[(i, j)]).sum::<f64>()))
        .collect()
}

pub fn dot_row(d: &SurvivalDataset, i: usize, b: &[f64]) -> f64 {
    (0..d.p()).map(|j| b[j] * d.covariates()[(i, j)]).sum()
}

pub fn dv(d: &SurvivalDataset, i: usize) -> f64 {
    if d.treatments()[i] {
        1.0
    } else {
        0.0
    }
}

/// Segments `(a, b]` of `[0, max time]` between consecutive distinct times.
pub fn segments(d: &SurvivalDataset) -> Vec<(f64, f64)> {
    let mut t: Vec<f64> = d.times().to_vec();
    t.push(0.0);
    t.sort_by(f64::total_cmp);
    t.dedup();
    t.windows(2).map(|w| (w[0], w[1])).collect()
}

/// `{j : X_j ≥ t}` by direct comparison.
pub fn risk_set(d: &SurvivalDataset, t: f64) -> Vec<usize> {
    (0..d.n()).filter(|&j| d.time(j) >= t).collect()
}

/// `(H_n, h_n)` by looping over segments and subjects.
pub fn brute_quadratic(d: &SurvivalDataset, include_d: bool) -> (DMatrix<f64>, DVector<f64>) {
    let off = usize::from(include_d);
    let dim = d.p() + off;
    let w = |i: usize| -> DVector<f64> {
        DVector::from_fn(dim, |j, _| {
            if include_d && j == 0 {
                dv(d, i)
            } else {
                d.covariates()[(i, j - off)]
            }
        })
    };
    let mean = |set: &[usize]| -> DVector<f64> {
        let mut m = DVector::zeros(dim);
        for &j in set {
            m += w(j);
        }
        m / set.len() as f64
    };
    let mut h = DMatrix::zeros(dim, dim);
    for (a, b) in segments(d) {
        let set = risk_set(d, 0.5 * (a + b));
        if set.is_empty() {
            continue;
        }
        let m = mean(&set);
        for &i in &set {
            let c = w(i) - &m;
            h += (b - a) * &c * c.transpose();
        }
    }
    let mut lin = DVector::zeros(dim);
    for i in 0..d.n() {
        if d.events()[i] {
            let set = risk_set(d, d.time(i));
            lin += w(i) - mean(&set);
        }
    }
    let n = d.n() as f64;
    (h / n, lin / n)
}

/// Breslow estimator `Λ̂(t; β, θ)` summed term by term.
pub fn brute_breslow(d: &SurvivalDataset, beta: &[f64], theta: f64, t: f64) -> f64 {
    let mut total = 0.0;
    let mut times: Vec<f64> = d.times().to_vec();
    times.sort_by(f64::total_cmp);
    times.dedup();
    for &u in times.iter().filter(|&&u| u <= t) {
        let events = (0..d.n()).filter(|&i| d.events()[i] && d.time(i) == u).count();
        if events > 0 {
            total += events as f64 / risk_set(d, u).len() as f64;
        }
    }
    for (a, b) in segments(d) {
        if a >= t {
            break;
        }
        let hi = b.min(t);
        let set = risk_set(d, 0.5 * (a + b));
        if set.is_empty() {
            continue;
        }
        let dens: f64 = set.iter().map(|&j| dot_row(d, j, beta) + theta * dv(d, j)).sum::<f64>() / set.len() as f64;
        total -= dens * (hi - a);
    }
    total
}

/// A baseline cumulative hazard given as a continuous density plus jumps.
pub struct Baseline<'a> {
    pub density: Box<dyn Fn(f64) -> f64 + 'a>,
    pub jumps: Vec<(f64, f64)>,
}

/// The profiled standard Breslow estimator at `θ`, built from direct risk-set loops.
pub fn brute_breslow_parts<'a>(d: &'a SurvivalDataset, beta: &'a [f64], theta: f64) -> Baseline<'a> {
    let mut times: Vec<f64> = d.times().to_vec();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let jumps = times
        .iter()
        .filter_map(|&u| {
            let e = (0..d.n()).filter(|&i| d.events()[i] && d.time(i) == u).count();
            (e > 0).then(|| (u, e as f64 / risk_set(d, u).len() as f64))
        })
        .collect();
    Baseline {
        density: Box::new(move |t| {
            let set = risk_set(d, t);
            if set.is_empty() {
                return 0.0;
            }
            -set.iter().map(|&j| dot_row(d, j, beta) + theta * dv(d, j)).sum::<f64>() / set.len() as f64
        }),
        jumps,
    }
}

/// `φ(θ)` by numerical integration: `[0, τ]` cut into `segments` equal cells,
/// refined at the observed times, midpoint rule on each cell.
pub fn quadrature_score(
    d: &SurvivalDataset,
    beta: &[f64],
    gamma: &[f64],
    theta: f64,
    base: &Baseline,
    segments: usize,
) -> f64 {
    let tau = d.tau();
    let mut cuts: Vec<f64> = (0..=segments).map(|k| tau * k as f64 / segments as f64).collect();
    cuts.extend_from_slice(d.times());
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mids: Vec<f64> = cuts.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let dens: Vec<f64> = {
        // the density is constant between observed times: evaluate once per distinct segment
        let mut out = Vec::with_capacity(mids.len());
        let mut cache: Option<(f64, f64, f64)> = None;
        let mut sorted_times: Vec<f64> = d.times().to_vec();
        sorted_times.push(0.0);
        sorted_times.sort_by(f64::total_cmp);
        sorted_times.dedup();
        for &m in &mids {
            let k = sorted_times.partition_point(|&u| u < m);
            let (lo, hi) = (
                sorted_times[k.saturating_sub(1)],
                *sorted_times.get(k).unwrap_or(&f64::INFINITY),
            );
            match cache {
                Some((a, b, v)) if a == lo && b == hi => out.push(v),
                _ => {
                    let v = (base.density)(m);
                    cache = Some((lo, hi, v));
                    out.push(v);
                }
            }
        }
        out
    };
    let ps = propensity(d, gamma);
    let mut total = 0.0;
    for i in 0..d.n() {
        let di = dv(d, i);
        let x = d.time(i);
        let bz = dot_row(d, i, beta);
        let mut integral = 0.0;
        for (c, w) in cuts.windows(2).enumerate() {
            if w[1] > x {
                break;
            }
            let h = w[1] - w[0];
            let m = mids[c];
            integral += h * (di * theta * m).exp() * (di * theta + bz + dens[c]);
        }
        for &(u, size) in &base.jumps {
            if u <= x {
                integral += (di * theta * u).exp() * size;
            }
        }
        let delta = if d.events()[i] { 1.0 } else { 0.0 };
        total += (di - ps[i]) * (delta * (di * theta * x).exp() - integral);
    }
    total / d.n() as f64
}

/// HDi as the controls' weighted average of `d(Λ̌¹ − Λ̌⁰)` with θ-free arm
/// estimators, summed segment by segment.
pub fn brute_hdi_contrast(d: &SurvivalDataset, beta: &[f64], ps: &[f64]) -> f64 {
    let w = |k: u8, i: usize| -> f64 {
        match (k, d.treatments()[i]) {
            (0, false) => ps[i],
            (1, true) => 1.0 - ps[i],
            _ => 0.0,
        }
    };
    let arm_increment = |k: u8, a: f64, b: f64| -> f64 {
        // jump at b plus drift over (a, b]
        let set = risk_set(d, 0.5 * (a + b));
        let den: f64 = set.iter().map(|&j| w(k, j)).sum();
        if den <= 0.0 {
            return 0.0;
        }
        let drift: f64 = set.iter().map(|&j| w(k, j) * dot_row(d, j, beta)).sum::<f64>() / den;
        let at_b = risk_set(d, b);
        let den_b: f64 = at_b.iter().map(|&j| w(k, j)).sum();
        let ev: f64 = (0..d.n()).filter(|&j| d.events()[j] && d.time(j) == b).map(|j| w(k, j)).sum();
        let jump = if den_b > 0.0 { ev / den_b } else { 0.0 };
        jump - drift * (b - a)
    };
    let mut num = 0.0;
    for (a, b) in segments(d) {
        let inc = arm_increment(1, a, b) - arm_increment(0, a, b);
        let mass: f64 = risk_set(d, b).iter().map(|&i| w(0, i)).sum();
        num += mass * inc;
    }
    let den: f64 = (0..d.n()).map(|i| w(0, i) * d.time(i)).sum();
    num / den
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).max(0.0).sqrt();
    (m, s)
}
