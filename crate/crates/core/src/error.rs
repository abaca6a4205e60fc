use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar or integer argument lies outside its admissible domain.
    #[error("parameter out of domain: {0}")]
    Parameter(String),

    #[error("evaluation point {t} outside [0, 1]")]
    OutOfDomain { t: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("grid is not strictly increasing at column {column}")]
    NonMonotoneGrid { column: usize },

    #[error("grid value {value} at column {column} outside [0, 1]")]
    GridOutOfRange { column: usize, value: f64 },

    #[error("simpson rule not applicable: {0}")]
    Simpson(String),

    #[error("{file}: row {row}, column {column}: {message}")]
    Parse {
        file: String,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("identifier mismatch: {0}")]
    IdMismatch(String),

    #[error("dataset is already centered")]
    AlreadyCentered,

    #[error("linear system is singular or not positive definite")]
    SolverSingular,

    #[error("solver did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("unsupported covariate law: {0}")]
    UnsupportedLaw(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn mismatch(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }
}
