use thiserror::Error;

/// Errors raised by the toolkit.
///
/// The split between [`Error::Validation`] and the numerical variants drives
/// the CLI exit status (1 versus 2).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("numerical instability at t = {t}: {detail}")]
    Instability { t: f64, detail: String },

    #[error("weighted field overflow: max magnitude {magnitude:e} exceeds guard {guard:e}")]
    Overflow { magnitude: f64, guard: f64 },

    #[error("modulation matrix is singular (|det| = {det:e})")]
    SingularModulation { det: f64 },

    #[error("ill-conditioned system: condition number {cond:e} exceeds {limit:e}")]
    IllConditioned { cond: f64, limit: f64 },

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Instability { .. }
                | Error::Overflow { .. }
                | Error::SingularModulation { .. }
                | Error::IllConditioned { .. }
                | Error::Eigensolver(_)
        )
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
