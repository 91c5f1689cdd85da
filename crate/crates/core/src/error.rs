//! Error types shared across the crate.
//!
//! Errors fall into two categories, exposed via [`SpatialError::category`]:
//! violations of documented preconditions on user-supplied data
//! ([`ErrorCategory::Input`]) and failures arising inside numerical routines
//! ([`ErrorCategory::Numerical`]). The CLI maps the former to exit code 2 and
//! the latter to exit code 3.

use thiserror::Error;

/// Coarse classification of an error, used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// The caller supplied data or options that violate a documented
    /// precondition (bad file, bad flag, degenerate input).
    Input,
    /// A numerical routine failed on admissible input (singular system,
    /// optimizer at the boundary, non-positive variance estimate).
    Numerical,
}

/// Unified error type for the library.
#[derive(Debug, Error)]
pub enum SpatialError {
    /// A coordinate or variable value was NaN or infinite.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// Fewer observations than the operation requires.
    #[error("too few observations: got {n}, need at least {min}")]
    TooFewObservations { n: usize, min: usize },

    /// Observation identifiers must be unique.
    #[error("duplicate observation id {id:?}")]
    DuplicateId { id: String },

    /// A weights specification is missing a parameter or has one out of range.
    #[error("invalid weights specification: {0}")]
    InvalidWeightsSpec(String),

    /// Two distinct observations share a location, so an inverse-distance
    /// weight would divide by zero.
    #[error(
        "coincident points: observations {i} and {j} are at zero distance, \
         which an inverse-distance transformation cannot weight"
    )]
    CoincidentPoints { i: usize, j: usize },

    /// A variable has no variance, so autocorrelation statistics degenerate.
    #[error("variable {name:?} is constant; spatial statistics are undefined")]
    ZeroVariance { name: String },

    /// Every weight is zero; there is no spatial structure to measure.
    #[error("weights matrix has no positive entries")]
    EmptyWeights,

    /// The weights matrix admits no variation under permutation (for
    /// example, every pair carries the same weight), so moment-based tests
    /// degenerate.
    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    /// A scalar argument is outside its documented range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The moment formulas need a minimum sample size.
    #[error("sample too small: got {n}, the requested statistic needs at least {min}")]
    SampleTooSmall { n: usize, min: usize },

    /// Permutation tests need enough draws for the pseudo p-value resolution.
    #[error("insufficient permutation draws: got {draws}, need at least {min}")]
    InsufficientDraws { draws: usize, min: usize },

    /// Two objects that must agree in size do not.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    /// A variable name does not resolve in the data set.
    #[error("unknown variable {name:?}")]
    UnknownVariable { name: String },

    /// A model specification violates its invariants.
    #[error("invalid model specification: {0}")]
    InvalidModelSpec(String),

    /// The design matrix is rank deficient; names the dependent columns.
    #[error("design matrix is rank deficient; dependent columns: {}", columns.join(", "))]
    Collinearity { columns: Vec<String> },

    /// The likelihood optimizer stopped at the edge of the admissible
    /// interval, which usually signals misspecification.
    #[error(
        "optimizer reached the boundary of the admissible interval for {parameter} \
         (estimate {value}); the model is likely misspecified for these data"
    )]
    BoundarySolution { parameter: String, value: f64 },

    /// A linear system was singular to working precision.
    #[error("singular system: {0}")]
    SingularSystem(String),

    /// The information matrix produced a non-positive variance estimate.
    #[error("ill-conditioned information: variance estimate for {parameter} is not positive")]
    IllConditionedInformation { parameter: String },

    /// Likelihood-ratio comparison of models that are not nested.
    #[error("invalid model comparison: {0}")]
    InvalidComparison(String),

    /// A file could not be parsed; carries a 1-based line number.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl SpatialError {
    /// Classify the error for exit-code mapping: precondition violations are
    /// input errors, failures inside numerical routines are numerical errors.
    pub fn category(&self) -> ErrorCategory {
        use SpatialError::*;
        match self {
            NonFinite { .. }
            | TooFewObservations { .. }
            | DuplicateId { .. }
            | InvalidWeightsSpec(_)
            | CoincidentPoints { .. }
            | ZeroVariance { .. }
            | EmptyWeights
            | DegenerateWeights(_)
            | InvalidArgument(_)
            | SampleTooSmall { .. }
            | InsufficientDraws { .. }
            | DimensionMismatch { .. }
            | UnknownVariable { .. }
            | InvalidModelSpec(_)
            | Collinearity { .. }
            | InvalidComparison(_)
            | Parse { .. }
            | Io(_) => ErrorCategory::Input,
            BoundarySolution { .. }
            | SingularSystem(_)
            | IllConditionedInformation { .. } => ErrorCategory::Numerical,
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, SpatialError>;
