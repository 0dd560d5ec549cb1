use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    ParameterDomain(String),

    #[error("infeasible mean constraint: c - (1 - a) * mu = {denominator} must be positive")]
    InfeasibleConstraint { denominator: f64 },

    #[error("degenerate parameters: {0}")]
    Degenerate(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("validation error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Validation { line: Option<u64>, message: String },

    #[error("not enough degrees of freedom: {bins} bins for {params} free parameters")]
    DegreesOfFreedom { bins: usize, params: usize },

    #[error("fit infeasible: {0}")]
    FitInfeasible(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("calibration failed: target r = {target} outside achievable range [{low:.4}, {high:.4}]")]
    Calibration { target: f64, low: f64, high: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("unknown id: {0}")]
    Lookup(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn validation(line: Option<u64>, message: impl Into<String>) -> Self {
        Error::Validation {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command line: 2 for infeasibility and
    /// calibration failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InfeasibleConstraint { .. }
            | Error::FitInfeasible(_)
            | Error::Infeasible(_)
            | Error::Calibration { .. } => 2,
            _ => 1,
        }
    }
}
