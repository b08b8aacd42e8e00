use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("matrix is not Hermitian: max |M - M†| = {defect:.3e} exceeds {tol:.1e}")]
    NotHermitian { defect: f64, tol: f64 },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("{name} = {value} is outside {range}")]
    OutOfRange {
        name: &'static str,
        value: f64,
        range: String,
    },

    #[error("{0}")]
    Unsupported(String),

    #[error("equality constraints are inconsistent (least-squares residual {residual:.3e})")]
    Inconsistent { residual: f64 },

    #[error("reduced state σ_B is singular (min eigenvalue {min_eig:.3e})")]
    SingularMarginal { min_eig: f64 },

    #[error("eigenvalue criterion not met: statistic {statistic:.6e} < threshold {threshold:.6e}")]
    CriterionNotMet { statistic: f64, threshold: f64 },

    #[error("certificate residual {residual:.3e} exceeds tolerance {tol:.1e}")]
    ResidualTooLarge { residual: f64, tol: f64 },

    #[error("term {term} has a factor with eigenvalue {min_eig:.3e} below the clip floor")]
    NegativeFactor { term: usize, min_eig: f64 },

    #[error("numerical routine failed: {0}")]
    Numerical(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(context: &'static str, expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}
