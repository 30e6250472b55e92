mod common;

use hazdiff::sim::{
    assign_treatment, beta_template, calibrate, draw_covariates, draw_outcome, gamma_template, run_study, simulate_dataset,
    summarize, write_records_csv, RepRecord, Scenario, ScenarioSpec, StudyConfig,
};
use hazdiff::pipeline::FitConfig;
use hazdiff::{Error, Method};
use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, Normal};

#[test]
fn coefficient_templates() {
    assert_eq!(beta_template(2, 5).unwrap(), vec![1.0, 0.1, 0.0, 0.0, 0.0]);
    let g = gamma_template(10, 12).unwrap();
    assert_eq!(&g[..2], &[1.0, 1.0]);
    assert!(g[2..10].iter().all(|&x| x == 0.05) && g[10..].iter().all(|&x| x == 0.0));
    let dense = beta_template(30, 40).unwrap();
    assert_eq!(dense.iter().filter(|&&x| x == 1.0).count(), 4);
    assert_eq!(dense.iter().filter(|&&x| x == 0.1).count(), 26);
    assert!(matches!(beta_template(7, 10), Err(Error::InvalidConfig(_))));
    assert!(matches!(gamma_template(20, 10), Err(Error::InvalidConfig(_))));
    let spec = ScenarioSpec::default_for(Scenario::Dense, 300, 300).unwrap();
    assert_eq!((spec.s_beta, spec.s_gamma, spec.theta0, spec.lambda0), (30, 1, -0.25, 0.25));
}

#[test]
fn accepted_covariates_meet_the_threshold_at_the_analytic_rate() {
    let spec = ScenarioSpec::new(Scenario::Sparse, 2, 1, 100, 5).unwrap();
    let rows = 20_000;
    let draw = draw_covariates(&spec, rows, &mut common::rng(1)).unwrap();
    for i in 0..rows {
        assert!(draw.z[(i, 0)] + 0.1 * draw.z[(i, 1)] >= 0.25);
    }
    let norm = (1.0f64 + 0.01).sqrt();
    let want = 1.0 - Normal::standard().cdf(0.25 / norm);
    let got = rows as f64 / draw.proposals as f64;
    let se = (want * (1.0 - want) / draw.proposals as f64).sqrt();
    assert!((got - want).abs() < 4.0 * se, "{got} vs {want}");
    // columns outside the support are unconditioned standard normals
    let col: Vec<f64> = draw.z.column(3).iter().cloned().collect();
    let (m, sd) = common::mean_sd(&col);
    assert!(m.abs() < 4.0 / (rows as f64).sqrt() && (sd - 1.0).abs() < 0.03);
}

#[test]
fn zero_outcome_coefficients_stall() {
    let mut spec = ScenarioSpec::new(Scenario::Sparse, 2, 1, 10, 3).unwrap();
    spec.beta0 = vec![0.0; 3];
    spec.max_proposals = 1000;
    assert!(matches!(draw_covariates(&spec, 5, &mut common::rng(2)), Err(Error::RejectionStall { accepted: 0, .. })));
}

#[test]
fn exponential_times_have_the_right_mean() {
    let spec = ScenarioSpec::new(Scenario::Sparse, 2, 1, 10, 2).unwrap();
    assert_eq!(spec.outcome_rate(false, 0.25), 0.5);
    let e = ScenarioSpec::new(Scenario::E, 2, 1, 10, 2).unwrap();
    assert!((e.outcome_rate(true, 0.25) - 0.25f64.exp()).abs() < 1e-15);
    let reps = 40_000;
    for (s, d) in [(&spec, false), (&spec, true), (&e, true), (&e, false)] {
        let z = DMatrix::from_fn(reps, 2, |_, j| if j == 0 { 0.25 } else { 0.0 });
        let (t, rates) = draw_outcome(s, &z, &vec![d; reps], &mut common::rng(3)).unwrap();
        let r = rates[0];
        let mean = t.iter().sum::<f64>() / reps as f64;
        assert!((mean - 1.0 / r).abs() < 3.0 / (r * (reps as f64).sqrt()), "rate {r}: mean {mean}");
    }
}

#[test]
fn symmetric_treatment_model_has_zero_intercept() {
    for scenario in [Scenario::Sparse, Scenario::P] {
        let spec = ScenarioSpec::new(scenario, 2, 0, 100, 5).unwrap();
        let cal = calibrate(&spec, 10_000, &mut common::rng(4)).unwrap();
        assert_eq!(cal.intercept, 0.0);
    }
}

#[test]
fn calibrated_design_hits_its_targets() {
    let spec = ScenarioSpec::new(Scenario::Sparse, 2, 1, 300, 10).unwrap();
    let cal = calibrate(&spec, spec.pilot_size, &mut common::rng(5)).unwrap();
    assert!((cal.censoring - 0.30).abs() <= 0.005);
    assert!((cal.atrisk - 0.10).abs() < 1e-6);
    let seeds = 100;
    let mut cens = Vec::new();
    let mut atrisk = Vec::new();
    let mut treated = Vec::new();
    for seed in 0..seeds {
        let (d, truth) = simulate_dataset(&spec, &cal, &mut common::rng(1000 + seed)).unwrap();
        assert_eq!(d.tau(), cal.tau);
        cens.push(d.events().iter().filter(|&&e| !e).count() as f64 / 300.0);
        atrisk.push((0..300).filter(|&i| d.treatments()[i] && d.time(i) >= cal.tau).count() as f64);
        let frac = d.treatments().iter().filter(|&&x| x).count() as f64 / 300.0;
        treated.push(frac);
        assert_eq!(truth.beta0.as_deref(), Some(&spec.beta0[..]));
    }
    let inside = cens.iter().filter(|c| (0.25..=0.35).contains(*c)).count();
    assert!(inside >= 90, "{inside}/100 seeds with censoring in [0.25, 0.35]");
    let (mc, _) = common::mean_sd(&cens);
    assert!((0.28..=0.32).contains(&mc), "mean censoring {mc}");
    let (ma, _) = common::mean_sd(&atrisk);
    assert!((ma - 30.0).abs() <= 3.0 * 30.0f64.sqrt(), "mean at-risk count {ma}");
    // each seed within 3 binomial standard errors, up to Monte-Carlo slack
    let band = 3.0 / (4.0f64 * 300.0).sqrt();
    let outside = treated.iter().filter(|f| (*f - 0.5).abs() > band).count();
    assert!(outside <= 2, "{outside}/100 seeds outside 0.5 ± {band}");
    let (mt, _) = common::mean_sd(&treated);
    assert!((mt - 0.5).abs() < 0.02);
}

#[test]
fn deterministic_and_probit_assignments() {
    let d_spec = ScenarioSpec::new(Scenario::D, 2, 1, 500, 6).unwrap();
    let cal = calibrate(&d_spec, 10_000, &mut common::rng(6)).unwrap();
    let z = draw_covariates(&d_spec, 500, &mut common::rng(7)).unwrap().z;
    let a = assign_treatment(&d_spec, &cal, &z, &mut common::rng(8));
    let b = assign_treatment(&d_spec, &cal, &z, &mut common::rng(9));
    assert_eq!(a, b);
    assert!((0..500).all(|i| a[i] == (z[(i, 0)] > cal.mu_d)));

    let logit = ScenarioSpec::new(Scenario::Sparse, 2, 1, 500, 6).unwrap();
    let probit = ScenarioSpec::new(Scenario::P, 2, 1, 500, 6).unwrap();
    let cl = calibrate(&logit, 10_000, &mut common::rng(10)).unwrap();
    let cp = calibrate(&probit, 10_000, &mut common::rng(10)).unwrap();
    let dl = assign_treatment(&logit, &cl, &z, &mut common::rng(11));
    let dp = assign_treatment(&probit, &cp, &z, &mut common::rng(11));
    let differ = dl.iter().zip(&dp).filter(|(x, y)| x != y).count();
    assert!(differ > 0);
}

fn record(rep: usize, theta: Option<f64>, se: f64, covers: bool) -> RepRecord {
    RepRecord {
        rep,
        method: Method::HdiCf,
        theta,
        se: theta.map(|_| se),
        ci_low: None,
        ci_high: None,
        covers: theta.map(|_| covers),
        error: theta.is_none().then(|| "no root".into()),
    }
}

#[test]
fn summary_moments_and_rmse_identity() {
    let thetas = [-0.31, -0.2, -0.27, -0.18, -0.35, -0.24];
    let mut records: Vec<RepRecord> = thetas.iter().enumerate().map(|(i, &t)| record(i, Some(t), 0.05, i % 3 != 0)).collect();
    records.push(record(6, None, 0.0, false));
    let s = summarize(Method::HdiCf, -0.25, &records);
    let r = thetas.len() as f64;
    let (mean, sd) = common::mean_sd(&thetas);
    assert_eq!((s.reps, s.divergent), (6, 1));
    assert!((s.bias - (mean + 0.25)).abs() < 1e-15 && (s.sd - sd).abs() < 1e-15);
    assert!((s.rmse.powi(2) - (s.bias.powi(2) + s.sd.powi(2) * (r - 1.0) / r)).abs() < 1e-14);
    assert!((s.cp - 4.0 / 6.0).abs() < 1e-15 && (s.mean_se - 0.05).abs() < 1e-15);
}

fn small_study(workers: usize) -> (String, String) {
    let spec = ScenarioSpec::new(Scenario::Sparse, 2, 1, 120, 15).unwrap();
    let cfg = StudyConfig {
        methods: vec![Method::Score, Method::Hdi, Method::HdiCf],
        reps: 4,
        seed: 17,
        workers: Some(workers),
        fit: FitConfig { k: 3, n_lambdas: 15, ..Default::default() },
        diagnostics: true,
    };
    let out = run_study(&spec, &cfg).unwrap();
    let mut csv = Vec::new();
    write_records_csv(&out.records, &mut csv).unwrap();
    (serde_json::to_string(&out.summary).unwrap(), String::from_utf8(csv).unwrap())
}

#[test]
fn studies_do_not_depend_on_worker_count() {
    let one = small_study(1);
    let three = small_study(3);
    assert_eq!(one, three);
    assert!(one.0.contains("\"hdi_cf\""));
}

#[test]
fn study_needs_two_replications() {
    let spec = ScenarioSpec::new(Scenario::Sparse, 2, 1, 50, 5).unwrap();
    let cfg = StudyConfig { reps: 1, ..Default::default() };
    assert!(matches!(run_study(&spec, &cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn null_effect_is_recovered() {
    let mut spec = ScenarioSpec::new(Scenario::Sparse, 2, 1, 300, 50).unwrap();
    spec.theta0 = 0.0;
    let cfg = StudyConfig {
        methods: vec![Method::HdiCf],
        reps: 24,
        seed: 3,
        workers: None,
        fit: FitConfig { n_lambdas: 30, ..Default::default() },
        diagnostics: false,
    };
    let out = run_study(&spec, &cfg).unwrap();
    let s = &out.summary.methods[0];
    assert!(s.reps >= 22);
    assert!(s.bias.abs() < 3.0 * s.sd / (s.reps as f64).sqrt(), "bias {} sd {}", s.bias, s.sd);
    assert!(out.summary.diagnostics.is_none());
}
