use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// A cell of tabular input could not be interpreted.
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    /// Input was well formed but inconsistent with the design.
    #[error("validation error: {0}")]
    Validation(String),

    /// A finite-sample requirement of an estimator is not met.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Cholesky factorization met a non-positive pivot.
    #[error("singular matrix ({context}) at pivot {pivot}")]
    Singular { context: String, pivot: usize },

    #[error("enumeration budget exceeded: {count} assignments > {budget}")]
    BudgetExceeded { count: u128, budget: u128 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-readable tag.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Precondition(_) => "precondition",
            Error::Singular { .. } => "singular",
            Error::BudgetExceeded { .. } => "budget",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn singular(context: impl Into<String>, pivot: usize) -> Self {
        Error::Singular {
            context: context.into(),
            pivot,
        }
    }

    /// Re-labels the context of a singularity error, leaving other variants untouched.
    pub(crate) fn in_context(self, context: impl Into<String>) -> Self {
        match self {
            Error::Singular { pivot, .. } => Error::Singular {
                context: context.into(),
                pivot,
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
