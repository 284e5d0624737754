use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HcrError>;

#[derive(Debug, Error)]
pub enum HcrError {
    #[error("polynomial degree {degree} unsupported (allowed 0..={max})")]
    DegreeUnsupported { degree: usize, max: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate sample: scale estimate is zero")]
    DegenerateScale,

    #[error("{what} failed to converge after {iterations} iterations (best so far {best:?})")]
    FitFailure {
        what: &'static str,
        iterations: usize,
        best: Vec<f64>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("context has nonpositive marginal mass (b0 = {b0})")]
    DegenerateContext { b0: f64 },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("column '{column}' has {got} values, expected {expected}")]
    Alignment {
        column: String,
        expected: usize,
        got: usize,
    },

    #[error("singular design: {0}")]
    Rank(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl HcrError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HcrError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line tool: 2 for configuration
    /// problems, 3 for bad or missing data, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HcrError::Config(_) | HcrError::DegreeUnsupported { .. } => 2,
            HcrError::Domain(_)
            | HcrError::InsufficientData { .. }
            | HcrError::Alignment { .. }
            | HcrError::Parse { .. }
            | HcrError::Io { .. }
            | HcrError::Csv(_)
            | HcrError::Json(_)
            | HcrError::Shape(_) => 3,
            HcrError::DegenerateScale
            | HcrError::FitFailure { .. }
            | HcrError::DegenerateContext { .. }
            | HcrError::Contract(_)
            | HcrError::Rank(_) => 4,
        }
    }
}
