use thiserror::Error;

/// Errors raised by data ingestion, the nuisance fits and the estimators.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("column `{column}` row {row}: value {value} is not 0 or 1")]
    NonBinaryColumn {
        column: String,
        row: usize,
        value: f64,
    },
    #[error("column `{column}` row {row}: non-finite or unparsable value")]
    NonFiniteValue { column: String, row: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid data: {0}")]
    InvalidData(String),
    #[error("io error: {0}")]
    Io(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),
    #[error("no convergence after {sweeps} iterations (max change {max_change:.3e})")]
    NoConvergence { sweeps: usize, max_change: f64 },
    #[error("fold {fold} has {size} subjects, need at least 2")]
    FoldTooSmall { fold: usize, size: usize },
    #[error("a training split contains a single treatment class")]
    SingleClassFold,

    #[error("no overlap in arm {arm}: zero weighted at-risk mass at t = {time}")]
    NoOverlapInArm { arm: u8, time: f64 },
    #[error("zero denominator: {0}")]
    ZeroDenominator(String),
    #[error("linear score has zero slope")]
    ZeroSlope,
    #[error("|theta| * tau = {0:.3e} exceeds the overflow guard")]
    Overflow(f64),
    #[error("score has no sign change on [{low:.4}, {high:.4}]")]
    NoRootInBracket { low: f64, high: f64 },

    #[error("truth (beta0 or E[D|Z]) required for deviances")]
    TruthRequired,
    #[error("zero weight mass in arm {0}")]
    ZeroWeightMass(u8),

    #[error("rejection sampling stalled: {accepted} accepted of {proposals} proposals")]
    RejectionStall { accepted: usize, proposals: usize },
    #[error("non-positive hazard rate {0}")]
    NonpositiveRate(f64),
    #[error("calibration infeasible: {0}")]
    CalibrationInfeasible(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// True for errors that originate in the input data rather than the estimation.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::MalformedHeader(_)
                | Error::NonBinaryColumn { .. }
                | Error::NonFiniteValue { .. }
                | Error::EmptyDataset
                | Error::InvalidData(_)
                | Error::Io(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
