//! Simulation harness: data-generating processes, calibration of the
//! censoring design, and the replication engine with summary tables.
//!
//! Covariates are iid standard normal conditioned on `β₀'Z ≥ 0.25`. Event
//! times are exponential with a subject-specific constant hazard, censoring
//! is `min(τ, U(0, c₀))` and `(τ, c₀)` are calibrated on a pilot cohort so
//! that a tenth of the cohort is expected to be treated and at risk at `τ`
//! and 30% of subjects are censored.

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::data::SurvivalDataset;
use crate::diagnostics::{diagnose, quantile, Truth};
use crate::error::{Error, Result};
use crate::folds::stream_rng;
use crate::logit::expit;
use crate::pipeline::{run_methods, FitConfig};
use crate::report::{Method, TreatmentEffectReport};

/// RNG stream reserved for calibration.
pub const CALIBRATION_STREAM: u64 = u64::MAX;
/// Covariate acceptance threshold on `β₀'Z`.
pub const ACCEPT_LEVEL: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Correct models, sparse coefficients.
    #[serde(rename = "sparse")]
    Sparse,
    /// Correct models, dense coefficients.
    #[serde(rename = "dense")]
    Dense,
    /// Outcome hazard with an exponential link.
    E,
    /// Probit treatment model.
    P,
    /// Deterministic treatment given the covariates.
    D,
}

impl Scenario {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "sparse" => Some(Scenario::Sparse),
            "dense" => Some(Scenario::Dense),
            "E" | "e" => Some(Scenario::E),
            "P" | "p" => Some(Scenario::P),
            "D" | "d" => Some(Scenario::D),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Sparse => "sparse",
            Scenario::Dense => "dense",
            Scenario::E => "E",
            Scenario::P => "P",
            Scenario::D => "D",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreatmentLink {
    Logistic,
    Probit,
    Deterministic,
}

/// Outcome coefficients for a sparsity level.
pub fn beta_template(s: usize, p: usize) -> Result<Vec<f64>> {
    let head: Vec<f64> = match s {
        2 => vec![1.0, 0.1],
        6 => [vec![1.0], vec![0.1; 5]].concat(),
        15 => [vec![1.0], vec![0.1; 13]].concat(),
        30 => [vec![1.0; 4], vec![0.1; 26]].concat(),
        _ => return Err(Error::InvalidConfig(format!("no outcome template for s_beta = {s}"))),
    };
    pad(head, p)
}

/// Treatment-model slopes for a sparsity level.
pub fn gamma_template(s: usize, p: usize) -> Result<Vec<f64>> {
    let head: Vec<f64> = match s {
        0 => vec![],
        1 => vec![1.0],
        3 => vec![1.0, 0.05, 0.05],
        10 => [vec![1.0, 1.0], vec![0.05; 8]].concat(),
        20 => [vec![1.0; 4], vec![0.05; 16]].concat(),
        _ => return Err(Error::InvalidConfig(format!("no treatment template for s_gamma = {s}"))),
    };
    pad(head, p)
}

fn pad(mut head: Vec<f64>, p: usize) -> Result<Vec<f64>> {
    if head.len() > p {
        return Err(Error::InvalidConfig(format!("template needs p >= {}, got {p}", head.len())));
    }
    head.resize(p, 0.0);
    Ok(head)
}

/// A data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub s_beta: usize,
    pub s_gamma: usize,
    pub theta0: f64,
    pub lambda0: f64,
    pub beta0: Vec<f64>,
    /// Treatment-model slopes; the intercept is calibrated.
    pub gamma0: Vec<f64>,
    pub censor_target: f64,
    /// Expected fraction of the cohort treated and at risk at `τ`.
    pub atrisk_target: f64,
    pub pilot_size: usize,
    /// Proposal budget before covariate sampling can stall.
    pub max_proposals: u64,
    pub min_acceptance: f64,
}

impl ScenarioSpec {
    pub fn new(scenario: Scenario, s_beta: usize, s_gamma: usize, n: usize, p: usize) -> Result<Self> {
        Ok(Self {
            scenario,
            n,
            p,
            s_beta,
            s_gamma,
            theta0: -0.25,
            lambda0: 0.25,
            beta0: beta_template(s_beta, p)?,
            gamma0: gamma_template(s_gamma, p)?,
            censor_target: 0.30,
            atrisk_target: 0.10,
            pilot_size: 20_000,
            max_proposals: 10_000_000,
            min_acceptance: 1e-6,
        })
    }

    /// Default sparsities of each scenario.
    pub fn default_for(scenario: Scenario, n: usize, p: usize) -> Result<Self> {
        let (sb, sg) = match scenario {
            Scenario::Dense => (30, 1),
            _ => (2, 1),
        };
        Self::new(scenario, sb, sg, n, p)
    }

    pub fn link(&self) -> TreatmentLink {
        match self.scenario {
            Scenario::P => TreatmentLink::Probit,
            Scenario::D => TreatmentLink::Deterministic,
            _ => TreatmentLink::Logistic,
        }
    }

    pub fn exp_link(&self) -> bool {
        self.scenario == Scenario::E
    }

    /// Constant hazard of a subject with treatment `d` and `β₀'Z = bz`.
    pub fn outcome_rate(&self, d: bool, bz: f64) -> f64 {
        let d = if d { 1.0 } else { 0.0 };
        if self.exp_link() {
            self.theta0 * d + bz.exp() + self.lambda0
        } else {
            self.lambda0 + self.theta0 * d + bz
        }
    }

    fn validate(&self) -> Result<()> {
        if self.beta0.len() != self.p || self.gamma0.len() != self.p {
            return Err(Error::InvalidConfig("coefficient length differs from p".into()));
        }
        if self.n < 2 || self.p < 1 {
            return Err(Error::InvalidConfig("need n >= 2 and p >= 1".into()));
        }
        Ok(())
    }
}

/// Accepted covariate rows and the number of proposals it took.
#[derive(Debug, Clone)]
pub struct CovariateDraw {
    pub z: DMatrix<f64>,
    pub proposals: u64,
}

/// `rows` iid standard normal vectors conditioned on `β₀'Z ≥ 0.25`.
pub fn draw_covariates(spec: &ScenarioSpec, rows: usize, rng: &mut ChaCha8Rng) -> Result<CovariateDraw> {
    let p = spec.beta0.len();
    let support: Vec<usize> = (0..p).filter(|&j| spec.beta0[j] != 0.0).collect();
    let mut z = DMatrix::zeros(rows, p);
    let mut proposals = 0u64;
    let mut row = vec![0.0; p];
    for r in 0..rows {
        loop {
            proposals += 1;
            let mut bz = 0.0;
            for &j in &support {
                let v: f64 = StandardNormal.sample(rng);
                row[j] = v;
                bz += spec.beta0[j] * v;
            }
            if bz >= ACCEPT_LEVEL {
                break;
            }
            if proposals >= spec.max_proposals && (r as f64) < spec.min_acceptance * proposals as f64 {
                return Err(Error::RejectionStall {
                    accepted: r,
                    proposals: proposals as usize,
                });
            }
        }
        for j in 0..p {
            if spec.beta0[j] == 0.0 {
                row[j] = StandardNormal.sample(rng);
            }
            z[(r, j)] = row[j];
        }
    }
    Ok(CovariateDraw { z, proposals })
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Calibrated design constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub tau: f64,
    pub c0: f64,
    pub intercept: f64,
    /// Threshold of the deterministic assignment.
    pub mu_d: f64,
    /// Censoring fraction implied on the pilot cohort.
    pub censoring: f64,
    /// Expected treated-at-risk fraction at `τ` on the pilot cohort.
    pub atrisk: f64,
}

fn slopes_lp(spec: &ScenarioSpec, z: &DMatrix<f64>) -> Vec<f64> {
    let mut lp = vec![0.0; z.nrows()];
    for (j, &g) in spec.gamma0.iter().enumerate() {
        if g != 0.0 {
            for (i, v) in z.column(j).iter().enumerate() {
                lp[i] += g * v;
            }
        }
    }
    lp
}

/// `E(D | Z)` for each row.
pub fn true_propensity(spec: &ScenarioSpec, cal: &Calibration, z: &DMatrix<f64>) -> Vec<f64> {
    slopes_lp(spec, z)
        .into_iter()
        .map(|s| match spec.link() {
            TreatmentLink::Logistic => expit(cal.intercept + s),
            TreatmentLink::Probit => normal_cdf(cal.intercept + s),
            TreatmentLink::Deterministic => {
                if s > cal.mu_d {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect()
}

/// Treatment flags. The deterministic link uses no randomness.
pub fn assign_treatment(spec: &ScenarioSpec, cal: &Calibration, z: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let ps = true_propensity(spec, cal, z);
    match spec.link() {
        TreatmentLink::Deterministic => ps.iter().map(|&p| p == 1.0).collect(),
        _ => ps.iter().map(|&p| rng.random::<f64>() < p).collect(),
    }
}

/// Exponential event times with the scenario's hazard; returns `(T, rate)`.
pub fn draw_outcome(
    spec: &ScenarioSpec,
    z: &DMatrix<f64>,
    d: &[bool],
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let bz = linear(z, &spec.beta0);
    let mut times = Vec::with_capacity(d.len());
    let mut rates = Vec::with_capacity(d.len());
    for (i, &di) in d.iter().enumerate() {
        let r = spec.outcome_rate(di, bz[i]);
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::NonpositiveRate(r));
        }
        let t: f64 = Exp::new(r).expect("positive rate").sample(rng);
        times.push(t);
        rates.push(r);
    }
    Ok((times, rates))
}

fn linear(z: &DMatrix<f64>, coef: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; z.nrows()];
    for (j, &c) in coef.iter().enumerate() {
        if c != 0.0 {
            for (i, v) in z.column(j).iter().enumerate() {
                out[i] += c * v;
            }
        }
    }
    out
}

/// Monotone bisection for an increasing `f` with a sign change on `[lo, hi]`.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v == 0.0 {
            return mid;
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Probability that a subject with hazard `r` is censored under
/// `C = min(τ, U(0, c₀))`.
fn censor_prob(r: f64, tau: f64, c0: f64) -> f64 {
    let s = (-r * tau).exp();
    -(-r * tau).exp_m1() / (r * c0) + (1.0 - tau / c0) * s
}

/// Solves for the treatment intercept, the deterministic threshold and
/// `(τ, c₀)` on a pilot cohort of `pilot_size` subjects.
pub fn calibrate(spec: &ScenarioSpec, pilot_size: usize, rng: &mut ChaCha8Rng) -> Result<Calibration> {
    spec.validate()?;
    if pilot_size < 10_000 {
        return Err(Error::InvalidConfig(format!("pilot size {pilot_size} < 10000")));
    }
    let z = draw_covariates(spec, pilot_size, rng)?.z;
    let lp = slopes_lp(spec, &z);
    let m = pilot_size as f64;
    let mut cal = Calibration {
        tau: 0.0,
        c0: 0.0,
        intercept: 0.0,
        mu_d: 0.0,
        censoring: 0.0,
        atrisk: 0.0,
    };
    match spec.link() {
        TreatmentLink::Logistic | TreatmentLink::Probit => {
            let link = |x: f64| match spec.link() {
                TreatmentLink::Logistic => expit(x),
                _ => normal_cdf(x),
            };
            let mean_ps = |b: f64| lp.iter().map(|&s| link(b + s)).sum::<f64>() / m - 0.5;
            let span = lp.iter().fold(1.0f64, |a, &s| a.max(s.abs())) + 10.0;
            cal.intercept = bisect(mean_ps, -span, span);
        }
        TreatmentLink::Deterministic => {
            let mut sorted = lp.clone();
            sorted.sort_by(f64::total_cmp);
            cal.mu_d = quantile(&sorted, 0.5);
        }
    }
    let ps = true_propensity(spec, &cal, &z);
    let bz = linear(&z, &spec.beta0);
    let r0: Vec<f64> = bz.iter().map(|&b| spec.outcome_rate(false, b)).collect();
    let r1: Vec<f64> = bz.iter().map(|&b| spec.outcome_rate(true, b)).collect();
    if r0.iter().chain(&r1).any(|&r| !(r > 0.0)) {
        return Err(Error::NonpositiveRate(r0.iter().chain(&r1).cloned().fold(f64::INFINITY, f64::min)));
    }
    let atrisk = |tau: f64, c0: f64| {
        (0..pilot_size)
            .map(|i| ps[i] * (-r1[i] * tau).exp())
            .sum::<f64>()
            / m
            * (1.0 - tau / c0)
    };
    let tau_for = |c0: f64| bisect(|t| spec.atrisk_target - atrisk(t, c0), 0.0, c0);
    let censoring = |tau: f64, c0: f64| {
        (0..pilot_size)
            .map(|i| ps[i] * censor_prob(r1[i], tau, c0) + (1.0 - ps[i]) * censor_prob(r0[i], tau, c0))
            .sum::<f64>()
            / m
    };
    let cens_at = |log_c0: f64| {
        let c0 = log_c0.exp();
        censoring(tau_for(c0), c0)
    };
    let mean_rate = r0.iter().chain(&r1).sum::<f64>() / (2.0 * m);
    let (lo, hi) = ((1e-3 / mean_rate).ln(), (1e4 / mean_rate).ln());
    let (c_lo, c_hi) = (cens_at(lo), cens_at(hi));
    if !(c_lo > spec.censor_target && c_hi < spec.censor_target) {
        return Err(Error::CalibrationInfeasible(format!(
            "censoring ranges over [{c_hi:.4}, {c_lo:.4}], target {}",
            spec.censor_target
        )));
    }
    // censoring decreases in c0
    let log_c0 = bisect(|l| spec.censor_target - cens_at(l), lo, hi);
    cal.c0 = log_c0.exp();
    cal.tau = tau_for(cal.c0);
    cal.censoring = censoring(cal.tau, cal.c0);
    cal.atrisk = atrisk(cal.tau, cal.c0);
    if (cal.censoring - spec.censor_target).abs() > 0.005 {
        return Err(Error::CalibrationInfeasible(format!(
            "achieved censoring {:.4}, at-risk {:.4}",
            cal.censoring, cal.atrisk
        )));
    }
    Ok(cal)
}

/// One simulated cohort with its truth.
pub fn simulate_dataset(
    spec: &ScenarioSpec,
    cal: &Calibration,
    rng: &mut ChaCha8Rng,
) -> Result<(SurvivalDataset, Truth)> {
    let z = draw_covariates(spec, spec.n, rng)?.z;
    let d = assign_treatment(spec, cal, &z, rng);
    let (t, _) = draw_outcome(spec, &z, &d, rng)?;
    let mut times = Vec::with_capacity(spec.n);
    let mut events = Vec::with_capacity(spec.n);
    for &ti in &t {
        let c = (rng.random::<f64>() * cal.c0).min(cal.tau);
        times.push(ti.min(c));
        events.push(ti <= c);
    }
    let truth = Truth {
        beta0: Some(spec.beta0.clone()),
        exp_link: spec.exp_link(),
        propensity: Some(true_propensity(spec, cal, &z)),
    };
    let data = SurvivalDataset::new(times, events, d, z, Some(cal.tau))?;
    Ok((data, truth))
}

/// Options of a simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub methods: Vec<Method>,
    pub reps: usize,
    pub seed: u64,
    /// Thread count; all available cores when unset.
    pub workers: Option<usize>,
    pub fit: FitConfig,
    /// Compute nuisance diagnostics when cross-fitting was run.
    pub diagnostics: bool,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            reps: 500,
            seed: 1,
            workers: None,
            fit: FitConfig::default(),
            diagnostics: true,
        }
    }
}

/// One method's result in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub method: Method,
    pub theta: Option<f64>,
    pub se: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub covers: Option<bool>,
    pub error: Option<String>,
}

impl RepRecord {
    fn new(rep: usize, method: Method, theta0: f64, r: &Result<TreatmentEffectReport>) -> Self {
        match r {
            Ok(r) => Self {
                rep,
                method,
                theta: Some(r.theta),
                se: Some(r.se),
                ci_low: Some(r.ci_low),
                ci_high: Some(r.ci_high),
                covers: Some(r.covers(theta0)),
                error: None,
            },
            Err(e) => Self {
                rep,
                method,
                theta: None,
                se: None,
                ci_low: None,
                ci_high: None,
                covers: None,
                error: Some(e.to_string()),
            },
        }
    }
}

/// Per-replication nuisance diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepDiagnostics {
    pub rep: usize,
    pub deviance_beta: Option<f64>,
    pub deviance_gamma: Option<f64>,
    pub magnitude_beta: Option<f64>,
    pub magnitude_gamma: Option<f64>,
    pub divergent: bool,
}

/// Monte-Carlo moments of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub bias: f64,
    pub sd: f64,
    pub mean_se: f64,
    pub cp: f64,
    pub rmse: f64,
    /// Replications entering the moments.
    pub reps: usize,
    /// Replications that failed and were excluded.
    pub divergent: usize,
}

/// Mean deviances and median magnitudes over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub deviance_beta: Option<f64>,
    pub deviance_gamma: Option<f64>,
    pub magnitude_beta: Option<f64>,
    pub magnitude_gamma: Option<f64>,
    pub divergent_reps: usize,
    pub divergent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub scenario: String,
    pub s_beta: usize,
    pub s_gamma: usize,
    pub n: usize,
    pub p: usize,
    pub theta0: f64,
    pub reps: usize,
    pub seed: u64,
    pub calibration: Calibration,
    pub methods: Vec<MethodSummary>,
    pub diagnostics: Option<DiagnosticsSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutput {
    pub summary: SimulationSummary,
    pub records: Vec<RepRecord>,
    pub diagnostics: Vec<RepDiagnostics>,
}

/// Aggregates the successful records of one method.
pub fn summarize(method: Method, theta0: f64, records: &[RepRecord]) -> MethodSummary {
    let ok: Vec<&RepRecord> = records
        .iter()
        .filter(|r| r.method == method && r.theta.is_some())
        .collect();
    let divergent = records
        .iter()
        .filter(|r| r.method == method && r.theta.is_none())
        .count();
    let r = ok.len() as f64;
    let thetas: Vec<f64> = ok.iter().map(|x| x.theta.unwrap()).collect();
    let mean = thetas.iter().sum::<f64>() / r;
    let sd = (thetas.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt();
    let mse = thetas.iter().map(|t| (t - theta0).powi(2)).sum::<f64>() / r;
    MethodSummary {
        method,
        bias: mean - theta0,
        sd,
        mean_se: ok.iter().map(|x| x.se.unwrap()).sum::<f64>() / r,
        cp: ok.iter().filter(|x| x.covers == Some(true)).count() as f64 / r,
        rmse: mse.sqrt(),
        reps: ok.len(),
        divergent,
    }
}

fn summarize_diagnostics(diags: &[RepDiagnostics]) -> Option<DiagnosticsSummary> {
    if diags.is_empty() {
        return None;
    }
    let mean = |f: fn(&RepDiagnostics) -> Option<f64>| {
        let v: Vec<f64> = diags.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let median = |f: fn(&RepDiagnostics) -> Option<f64>| {
        let mut v: Vec<f64> = diags.iter().filter_map(f).collect();
        v.sort_by(f64::total_cmp);
        (!v.is_empty()).then(|| quantile(&v, 0.5))
    };
    let magnitude_gamma = median(|d| d.magnitude_gamma);
    let divergent_reps = diags.iter().filter(|d| d.divergent).count();
    Some(DiagnosticsSummary {
        deviance_beta: mean(|d| d.deviance_beta),
        deviance_gamma: mean(|d| d.deviance_gamma),
        magnitude_beta: median(|d| d.magnitude_beta),
        magnitude_gamma,
        divergent_reps,
        divergent: magnitude_gamma.is_none_or(|m| m > crate::diagnostics::DIVERGENCE_LEVEL),
    })
}

/// Seed of the estimator fits in replication `rep`.
fn rep_fit_seed(rng: &mut ChaCha8Rng) -> u64 {
    rng.next_u64()
}

/// Runs one replication: fresh cohort, every requested method.
pub fn run_replication(
    spec: &ScenarioSpec,
    cal: &Calibration,
    cfg: &StudyConfig,
    rep: usize,
) -> Result<(Vec<RepRecord>, Option<RepDiagnostics>)> {
    let mut rng = stream_rng(cfg.seed, rep as u64);
    let (data, truth) = simulate_dataset(spec, cal, &mut rng)?;
    let fit = FitConfig {
        seed: rep_fit_seed(&mut rng),
        ..cfg.fit.clone()
    };
    let out = run_methods(&data, &cfg.methods, &fit);
    let records = out
        .outcomes
        .iter()
        .map(|o| RepRecord::new(rep, o.method, spec.theta0, &o.result))
        .collect();
    let diag = match (cfg.diagnostics, &out.plan, &out.fold_nuisances) {
        (true, Some(plan), Some(folds)) => {
            let d = diagnose(&data, plan, folds, Some(&truth))?;
            Some(RepDiagnostics {
                rep,
                deviance_beta: d.deviance_beta,
                deviance_gamma: d.deviance_gamma,
                magnitude_beta: d.magnitude_beta,
                magnitude_gamma: d.magnitude_gamma,
                divergent: d.divergent,
            })
        }
        _ => None,
    };
    Ok((records, diag))
}

/// Calibrates the design, runs `reps` replications in parallel and
/// aggregates. Replications use independent RNG streams of the master seed,
/// so results do not depend on the number of workers.
pub fn run_study(spec: &ScenarioSpec, cfg: &StudyConfig) -> Result<StudyOutput> {
    spec.validate()?;
    if cfg.reps < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 replications, got {}", cfg.reps)));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| {
        let cal = calibrate(spec, spec.pilot_size, &mut stream_rng(cfg.seed, CALIBRATION_STREAM))?;
        let reps: Vec<(Vec<RepRecord>, Option<RepDiagnostics>)> = (0..cfg.reps)
            .into_par_iter()
            .map(|rep| {
                run_replication(spec, &cal, cfg, rep).or_else(|e| {
                    // data generation failed: every method counts as divergent
                    let err: Result<TreatmentEffectReport> = Err(e);
                    Ok((
                        cfg.methods
                            .iter()
                            .map(|&m| RepRecord::new(rep, m, spec.theta0, &err))
                            .collect(),
                        None,
                    ))
                })
            })
            .collect::<Result<_>>()?;
        let mut records = Vec::new();
        let mut diagnostics = Vec::new();
        for (r, d) in reps {
            records.extend(r);
            diagnostics.extend(d);
        }
        let mut methods = cfg.methods.clone();
        methods.sort();
        methods.dedup();
        let summary = SimulationSummary {
            scenario: spec.scenario.name().to_string(),
            s_beta: spec.s_beta,
            s_gamma: spec.s_gamma,
            n: spec.n,
            p: spec.p,
            theta0: spec.theta0,
            reps: cfg.reps,
            seed: cfg.seed,
            calibration: cal,
            methods: methods.iter().map(|&m| summarize(m, spec.theta0, &records)).collect(),
            diagnostics: summarize_diagnostics(&diagnostics),
        };
        Ok(StudyOutput {
            summary,
            records,
            diagnostics,
        })
    })
}

/// Writes per-replication records as CSV.
pub fn write_records_csv<W: std::io::Write>(records: &[RepRecord], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Io(e.to_string());
    wtr.write_record(["rep", "method", "theta", "se", "ci_low", "ci_high", "covers", "error"])
        .map_err(err)?;
    let f = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x}"));
    for r in records {
        wtr.write_record([
            r.rep.to_string(),
            r.method.tag().to_string(),
            f(r.theta),
            f(r.se),
            f(r.ci_low),
            f(r.ci_high),
            r.covers.map_or_else(String::new, |c| u8::from(c).to_string()),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    wtr.flush()?;
    Ok(())
}
