use thiserror::Error;

/// Errors raised by the solver, operator and fitting layers.
#[derive(Debug, Error)]
pub enum Error {
    /// The pivot at `column` was non-positive during Cholesky factorization.
    /// `series` is attached when the failure is propagated from a batch solve.
    #[error("matrix not positive definite at column {column}{}", match .series { Some(s) => format!(" (series {s})"), None => String::new() })]
    NotPositiveDefinite {
        column: usize,
        series: Option<usize>,
    },

    /// Shape or layout violation: out-of-band entries, asymmetry, length mismatch.
    #[error("structural error: {0}")]
    Structure(String),

    /// An input value is outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A channel has zero variance over observed positions and cannot be standardized.
    #[error("channel {0} has zero variance over observed positions")]
    ZeroVariance(usize),

    /// The optimization loop tripped the divergence detector.
    #[error("optimization diverged at step {step}: {details}")]
    Diverged { step: usize, details: String },

    /// A gradient entry became non-finite during fitting.
    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },

    /// Malformed input data (bad rows, duplicates, unsorted times).
    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    pub fn structure(msg: impl Into<String>) -> Self {
        Error::Structure(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    /// Attach a series index to a factorization failure bubbling out of a batch.
    pub fn with_series(self, series: usize) -> Self {
        match self {
            Error::NotPositiveDefinite { column, .. } => Error::NotPositiveDefinite {
                column,
                series: Some(series),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
