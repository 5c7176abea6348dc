use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("outcome {y} outside the support of the {family} family")]
    Domain { family: &'static str, y: f64 },

    #[error("inadmissible parameter: {0}")]
    Parameter(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("no CACE map for family {0}")]
    UnsupportedFamily(String),

    #[error("all cell masses underflow at y = {0}")]
    DegeneratePoint(f64),

    #[error("logarithm of non-positive argument in log-odds contrast {index} at y = {y}")]
    LogOddsDomain { index: usize, y: f64 },

    #[error("singular recovery: {0}")]
    Singular(&'static str),

    #[error("inconsistent GLM coefficients: {0}")]
    InconsistentCoefficients(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("weak instrument: estimated complier proportion {0} is not positive")]
    WeakInstrument(f64),

    #[error("no information: {0}")]
    NoInformation(String),

    #[error("optimizer failed to converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        /// Best-effort estimate on the constrained scale, if any start produced a finite value.
        best: Option<Box<crate::model::OutcomeParams>>,
    },

    #[error("estimate escaped to the parameter boundary: {0}")]
    Boundary(String),

    #[error("bootstrap unstable: {failed} of {total} resamples failed")]
    UnstableFit { failed: usize, total: usize },

    #[error("EM log-likelihood decreased by {0:e}; monotonicity violated")]
    EmMonotonicity(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed input at line {line}: {message}")]
    Parse { line: u64, message: String },
}

impl Error {
    /// Whether the failure reflects the data carrying too little information, as opposed to a
    /// numerical or usage problem.
    pub fn is_statistical(&self) -> bool {
        matches!(
            self,
            Error::InsufficientData(_) | Error::WeakInstrument(_) | Error::NoInformation(_)
        )
    }

    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Boundary(_)
                | Error::UnstableFit { .. }
                | Error::EmMonotonicity(_)
                | Error::Numerical(_)
                | Error::DegeneratePoint(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
