//! `hazdiff`: fit, simulate and diagnose treatment-effect estimators for
//! censored outcomes under the additive hazards model.
//!
//! Exit codes: 0 success, 2 data or configuration error, 3 estimator error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "hazdiff", version, about = "Treatment effects on censored survival outcomes with high-dimensional covariates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the treatment effect on a CSV dataset.
    Fit(FitArgs),
    /// Run a Monte-Carlo study.
    Simulate(SimulateArgs),
    /// Balance, propensity and nuisance diagnostics on a CSV dataset.
    Diagnose(DiagnoseArgs),
}

/// Tuning shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Tuning {
    /// key = value file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cross-fitting folds.
    #[arg(long)]
    pub folds: Option<usize>,
    /// Penalty-selection folds for the one-shot estimators.
    #[arg(long)]
    pub cv_folds: Option<usize>,
    /// Penalty-selection folds inside each cross-fitting fold (default folds − 1).
    #[arg(long)]
    pub inner_cv_folds: Option<usize>,
    #[arg(long)]
    pub n_lambdas: Option<usize>,
    #[arg(long)]
    pub lambda_min_ratio: Option<f64>,
    /// Master seed (falls back to the config file, then HAZDIFF_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Thread count; all cores when omitted.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Penalize covariates on the unit-variance scale.
    #[arg(long)]
    pub standardize: Option<bool>,
    /// Freeze the score's baseline hazard at the penalized treatment coefficient.
    #[arg(long)]
    pub fixed_baseline: Option<bool>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// CSV with header time,status,treatment,z1,...,zp.
    #[arg(long)]
    pub input: PathBuf,
    /// End of follow-up; the largest time when omitted.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Methods (comma separated or repeated): naive, score, hdi, score-cf, hdi-cf, all.
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<String>,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// sparse, dense, E, P or D.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Outcome sparsity (2, 6, 15 or 30).
    #[arg(long)]
    pub sb: Option<usize>,
    /// Treatment sparsity (1, 3, 10 or 20).
    #[arg(long)]
    pub sg: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Methods as for `fit`; all when omitted.
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<String>,
    /// Pilot cohort size for calibration.
    #[arg(long)]
    pub pilot_size: Option<usize>,
    /// Summary JSON path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-replication CSV path.
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub tau: Option<f64>,
    /// File of true outcome coefficients (comma, space or newline separated).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// File of true propensities, one per subject.
    #[arg(long)]
    pub truth_ps: Option<PathBuf>,
    /// The true outcome model uses an exponential link.
    #[arg(long)]
    pub exp_link: bool,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Balance table CSV path.
    #[arg(long)]
    pub balance_csv: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: Tuning,
}

/// Failure classes with their exit codes.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Data(String),
    Estimator(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Data(_) => 2,
            CliError::Estimator(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Data(m) | CliError::Estimator(m) => f.write_str(m),
        }
    }
}

impl From<hazdiff::Error> for CliError {
    fn from(e: hazdiff::Error) -> Self {
        if e.is_data_error() || matches!(e, hazdiff::Error::InvalidConfig(_)) {
            CliError::Data(e.to_string())
        } else {
            CliError::Estimator(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Diagnose(a) => commands::diagnose(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
