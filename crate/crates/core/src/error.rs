use std::path::PathBuf;

use crate::balance_sheet::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid balance sheets: {}", format_violations(.0))]
    Validation(Vec<Violation>),

    #[error("duplicate bank name {name:?} (rows {first} and {second})")]
    DuplicateName {
        name: String,
        first: usize,
        second: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible marginals: {0}")]
    InfeasibleMarginals(String),

    #[error("spectral radius is zero; cannot calibrate beta")]
    ZeroSpectralRadius,

    #[error("power iteration did not converge after {iterations} iterations (best estimate {estimate})")]
    SpectralNotConverged { estimate: f64, iterations: usize },

    #[error("infeasible problem: bank {bank} has threshold {threshold} but no shock channel")]
    Infeasible { bank: usize, threshold: f64 },

    #[error("degenerate cost: K = 0, shares are undefined")]
    DegenerateCost,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

fn format_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
