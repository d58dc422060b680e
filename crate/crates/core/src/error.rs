use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("negative or non-normalized initial probability: {0}")]
    NegativeProbability(String),
    #[error("diagonal entry S[{index},{index}] = {value} is not negative")]
    BadDiagonal { index: usize, value: f64 },
    #[error("row {row} of the sub-generator has positive sum {value}")]
    PositiveRowSum { row: usize, value: f64 },
    #[error("off-diagonal rate S[{row},{col}] = {value} is negative")]
    NegativeRate { row: usize, col: usize, value: f64 },
    #[error("singular sub-generator (no reachable absorption; infinite mean)")]
    SingularGenerator,
    #[error("no valid phase-type draw after {attempts} attempts")]
    RejectionBudgetExceeded { attempts: usize },
    #[error("unstable queue: utilization {rho} >= 1")]
    Unstable { rho: f64 },
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("tail mass {tail_mass:e} beyond level {l} exceeds epsilon {epsilon:e}")]
    TailTooHeavy { tail_mass: f64, l: usize, epsilon: f64 },
    #[error("feature {index} has zero variance")]
    DegenerateFeature { index: usize },
    #[error("dataset mismatch: {0}")]
    DatasetMismatch(String),
    #[error("percentile {p} beyond covered probability mass {covered}")]
    PercentileBeyondTruncation { p: f64, covered: f64 },
    #[error("service sample contains a non-positive value at line {line}")]
    NonPositiveSample { line: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable category, used for CLI error lines and FFI codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NegativeProbability(_) => "NegativeProbability",
            Error::BadDiagonal { .. } => "BadDiagonal",
            Error::PositiveRowSum { .. } => "PositiveRowSum",
            Error::NegativeRate { .. } => "NegativeRate",
            Error::SingularGenerator => "SingularGenerator",
            Error::RejectionBudgetExceeded { .. } => "RejectionBudgetExceeded",
            Error::Unstable { .. } => "Unstable",
            Error::NoConvergence(_) => "NoConvergence",
            Error::TailTooHeavy { .. } => "TailTooHeavy",
            Error::DegenerateFeature { .. } => "DegenerateFeature",
            Error::DatasetMismatch(_) => "DatasetMismatch",
            Error::PercentileBeyondTruncation { .. } => "PercentileBeyondTruncation",
            Error::NonPositiveSample { .. } => "NonPositiveSample",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Parse(_) => "Parse",
            Error::Io(_) => "Io",
            Error::Json(_) => "Parse",
        }
    }
}
