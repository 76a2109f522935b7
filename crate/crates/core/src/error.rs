use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("knot degeneracy: {0}")]
    KnotDegeneracy(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty risk set at failure time {time}")]
    EmptyRiskSet { time: f64 },

    #[error(
        "Newton-Raphson did not converge after {iterations} iterations \
         (max |score| = {max_score:e}, last change in log-likelihood = {delta_loglik:e})"
    )]
    NonConvergence {
        iterations: usize,
        max_score: f64,
        delta_loglik: f64,
    },

    #[error("singular information matrix (reciprocal condition {rcond:e})")]
    SingularInformation { rcond: f64 },

    #[error("monotone likelihood: coefficient {index} reached {value} at iteration {iteration}")]
    MonotoneLikelihood {
        index: usize,
        value: f64,
        iteration: usize,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("insufficient rows: {rows} complete rows for {columns} columns")]
    InsufficientRows { rows: usize, columns: usize },

    #[error("separation detected in column {column} ({name}): |coefficient| = {value}")]
    Separation {
        column: usize,
        name: String,
        value: f64,
    },

    #[error("imputation {imputation}, iteration {iteration}, covariate {covariate}: {source}")]
    Imputation {
        imputation: usize,
        iteration: usize,
        covariate: String,
        #[source]
        source: Box<Error>,
    },

    #[error("rate calibration failed: {0}")]
    Calibration(String),

    #[error("model selection failed: {0}")]
    Selection(String),
}

impl Error {
    /// True for failures of the numerical machinery itself (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonConvergence { .. }
            | Error::SingularInformation { .. }
            | Error::MonotoneLikelihood { .. }
            | Error::Singular(_)
            | Error::Separation { .. }
            | Error::NonFinite(_)
            | Error::EmptyRiskSet { .. }
            | Error::Calibration(_)
            | Error::Selection(_) => true,
            Error::Imputation { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    /// Short stable name of the failure kind, looking through imputation context.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidData(_) => "invalid_data",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::KnotDegeneracy(_) => "knot_degeneracy",
            Error::NonFinite(_) => "non_finite",
            Error::EmptyRiskSet { .. } => "empty_risk_set",
            Error::NonConvergence { .. } => "non_convergence",
            Error::SingularInformation { .. } => "singular_information",
            Error::MonotoneLikelihood { .. } => "monotone_likelihood",
            Error::Singular(_) => "singular",
            Error::InsufficientRows { .. } => "insufficient_rows",
            Error::Separation { .. } => "separation",
            Error::Imputation { source, .. } => source.category(),
            Error::Calibration(_) => "calibration",
            Error::Selection(_) => "selection",
        }
    }
}
