use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use hazdiff::crossfit::fit_fold_nuisances;
use hazdiff::diagnostics::{balance_report, decile_probes, diagnose as run_diagnostics, BalanceReport, NuisanceDiagnostics, Truth};
use hazdiff::pipeline::{fit_nuisance, run_methods, FitConfig, Needs};
use hazdiff::sim::{run_study, write_records_csv, Scenario, ScenarioSpec, StudyConfig};
use hazdiff::{load_csv, FoldPlan, Method, TreatmentEffectReport};

use crate::config::FileConfig;
use crate::{CliError, DiagnoseArgs, FitArgs, SimulateArgs, Tuning};

fn fit_config(t: &Tuning, file: &FileConfig) -> Result<FitConfig, CliError> {
    let d = FitConfig::default();
    let cfg = FitConfig {
        k: file.pick(t.folds, "folds")?.unwrap_or(d.k),
        cv_folds: file.pick(t.cv_folds, "cv_folds")?.unwrap_or(d.cv_folds),
        inner_cv_folds: file.pick(t.inner_cv_folds, "inner_cv_folds")?,
        n_lambdas: file.pick(t.n_lambdas, "n_lambdas")?.unwrap_or(d.n_lambdas),
        lambda_min_ratio: file.pick(t.lambda_min_ratio, "lambda_min_ratio")?.unwrap_or(d.lambda_min_ratio),
        seed: file.seed(t.seed)?.unwrap_or(d.seed),
        hdi_cofit: file.get("hdi_cofit")?.unwrap_or(d.hdi_cofit),
        fixed_baseline: file.pick(t.fixed_baseline, "fixed_baseline")?.unwrap_or(d.fixed_baseline),
        standardize: file.pick(t.standardize, "standardize")?.unwrap_or(d.standardize),
    };
    if cfg.k < 2 || cfg.cv_folds < 2 {
        return Err(CliError::Data("fold counts must be at least 2".into()));
    }
    if cfg.n_lambdas < 2 || !(cfg.lambda_min_ratio > 0.0 && cfg.lambda_min_ratio <= 1.0) {
        return Err(CliError::Data("need n_lambdas >= 2 and 0 < lambda_min_ratio <= 1".into()));
    }
    Ok(cfg)
}

fn parse_methods(flag: &[String], file: &FileConfig) -> Result<Vec<Method>, CliError> {
    let names: Vec<String> = if flag.is_empty() {
        file.raw("method")
            .map(|v| v.split(',').map(|s| s.trim().to_string()).collect())
            .unwrap_or_else(|| vec!["all".into()])
    } else {
        flag.to_vec()
    };
    let mut out = Vec::new();
    for name in names.iter().filter(|s| !s.is_empty()) {
        if name.eq_ignore_ascii_case("all") {
            out.extend(Method::ALL);
        } else {
            out.push(Method::parse(name).ok_or_else(|| CliError::Data(format!("unknown method `{name}`")))?);
        }
    }
    out.sort();
    out.dedup();
    if out.is_empty() {
        return Err(CliError::Data("no method selected".into()));
    }
    Ok(out)
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w.max(1));
    }
    b.build().map_err(|e| CliError::Data(format!("thread pool: {e}")))
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    let io = |e: std::io::Error| CliError::Data(format!("write failed: {e}"));
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(io),
        None => std::io::stdout().write_all(bytes).map_err(io),
    }
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

pub fn fit(a: FitArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.tuning.config.as_deref())?;
    let cfg = fit_config(&a.tuning, &file)?;
    let methods = parse_methods(&a.method, &file)?;
    let tau = file.pick(a.tau, "tau")?;
    let workers = file.pick(a.tuning.workers, "workers")?;
    let data = load_csv(&a.input, tau)?;
    let out = pool(workers)?.install(|| run_methods(&data, &methods, &cfg));
    let mut reports: Vec<TreatmentEffectReport> = Vec::new();
    let mut failures = Vec::new();
    for o in out.outcomes {
        match o.result {
            Ok(r) => reports.push(r),
            Err(e) => failures.push(format!("{}: {e}", o.method)),
        }
    }
    let bytes = if methods.len() == 1 && reports.len() == 1 {
        json(&reports[0])
    } else {
        json(&reports)
    };
    if !reports.is_empty() {
        emit(a.out.as_deref(), &bytes)?;
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Estimator(failures.join("; ")))
    }
}

fn scenario_spec(a: &SimulateArgs, file: &FileConfig) -> Result<ScenarioSpec, CliError> {
    let name: String = file
        .pick(a.scenario.clone(), "scenario")?
        .ok_or_else(|| CliError::Data("--scenario is required".into()))?;
    let scenario = Scenario::parse(&name).ok_or_else(|| CliError::Data(format!("unknown scenario `{name}`")))?;
    let n = file.pick(a.n, "n")?.unwrap_or(300);
    let p = file.pick(a.p, "p")?.unwrap_or(300);
    let base = ScenarioSpec::default_for(scenario, n, p)?;
    let sb = file.pick(a.sb, "sb")?.unwrap_or(base.s_beta);
    let sg = file.pick(a.sg, "sg")?.unwrap_or(base.s_gamma);
    let mut spec = ScenarioSpec::new(scenario, sb, sg, n, p)?;
    if let Some(m) = file.pick(a.pilot_size, "pilot_size")? {
        spec.pilot_size = m;
    }
    Ok(spec)
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.tuning.config.as_deref())?;
    let spec = scenario_spec(&a, &file)?;
    let fit = fit_config(&a.tuning, &file)?;
    let study = StudyConfig {
        methods: parse_methods(&a.method, &file)?,
        reps: file.pick(a.reps, "reps")?.unwrap_or(500),
        seed: fit.seed,
        workers: file.pick(a.tuning.workers, "workers")?,
        diagnostics: true,
        fit,
    };
    let out = run_study(&spec, &study)?;
    if let Some(path) = &a.records {
        let f = std::fs::File::create(path)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))?;
        write_records_csv(&out.records, f)?;
    }
    emit(a.out.as_deref(), &json(&out.summary))
}

fn read_numbers(path: &PathBuf) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Data(format!("{}: bad number `{s}`", path.display())))
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct DiagnoseOutput {
    n: usize,
    p: usize,
    k: usize,
    nuisance: NuisanceDiagnostics,
    balance: BalanceSummary,
}

#[derive(Debug, Serialize)]
struct BalanceSummary {
    lambda_gamma: f64,
    sup_gap: f64,
    probes: usize,
}

pub fn diagnose(a: DiagnoseArgs) -> Result<(), CliError> {
    let file = FileConfig::load(a.tuning.config.as_deref())?;
    let cfg = fit_config(&a.tuning, &file)?;
    let tau = file.pick(a.tau, "tau")?;
    let workers = file.pick(a.tuning.workers, "workers")?;
    let data = load_csv(&a.input, tau)?;
    let beta0 = a.truth.as_ref().map(read_numbers).transpose()?;
    if let Some(b) = &beta0 {
        if b.len() != data.p() {
            return Err(CliError::Data(format!("truth has {} coefficients, data has p = {}", b.len(), data.p())));
        }
    }
    let propensity = a.truth_ps.as_ref().map(read_numbers).transpose()?;
    if let Some(m) = &propensity {
        if m.len() != data.n() {
            return Err(CliError::Data(format!("truth-ps has {} values, data has n = {}", m.len(), data.n())));
        }
    }
    let truth = (beta0.is_some() || propensity.is_some()).then(|| Truth {
        beta0,
        exp_link: a.exp_link,
        propensity,
    });
    let (nuisance, balance) = pool(workers)?.install(|| -> Result<(NuisanceDiagnostics, (f64, BalanceReport)), CliError> {
        let plan = FoldPlan::stratified(data.treatments(), cfg.k, cfg.seed)?;
        let needs = Needs {
            cofit: cfg.hdi_cofit,
            plain: !cfg.hdi_cofit,
        };
        let folds = fit_fold_nuisances(&data, &plan, &cfg, needs)?;
        let nuisance = run_diagnostics(&data, &plan, &folds, truth.as_ref())?;
        let none = Needs {
            cofit: false,
            plain: false,
        };
        let gamma = fit_nuisance(&data, none, cfg.cv_folds, &cfg, cfg.seed)?.gamma;
        let report = balance_report(&data, &gamma.gamma, &decile_probes(&data))?;
        Ok((nuisance, (gamma.lambda, report)))
    })?;
    let (lambda_gamma, table) = balance;
    if let Some(path) = &a.balance_csv {
        let f = std::fs::File::create(path)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))?;
        table.write_csv(f)?;
    }
    let out = DiagnoseOutput {
        n: data.n(),
        p: data.p(),
        k: cfg.k,
        nuisance,
        balance: BalanceSummary {
            lambda_gamma,
            sup_gap: table.sup_gap,
            probes: table.rows.len(),
        },
    };
    emit(a.out.as_deref(), &json(&out))
}
