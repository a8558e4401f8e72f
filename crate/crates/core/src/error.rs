//! Crate-wide error type.
//!
//! Errors fall into two broad groups that front ends treat differently:
//! input/validation problems ([`Error::is_validation`]) and numerical
//! failures encountered while computing (everything else).

use thiserror::Error;

/// Errors produced by model construction, evaluation and experiments.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter point lies outside the family's open domain.
    #[error("parameter out of domain for family `{family}`: {detail}")]
    ParameterDomain { family: String, detail: String },

    /// An observation lies outside the family's support.
    #[error("observation outside support of family `{family}`: x = {x}")]
    ObservationSupport { family: String, x: f64 },

    /// A structural invariant of an input value is violated.
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },

    /// The mixture density vanished where an evaluation required it.
    #[error("singular evaluation: {0}")]
    Singular(String),

    /// A computation produced a non-finite value.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Adaptive quadrature exhausted its subdivision budget.
    #[error(
        "quadrature did not converge after {subdivisions} subdivisions \
         (partial estimate {partial:e}, error estimate {error:e})"
    )]
    QuadratureNonConvergence {
        subdivisions: usize,
        partial: f64,
        error: f64,
    },

    /// A counting-measure sum exhausted its term budget.
    #[error("counting sum did not converge after {terms} terms (partial sum {partial:e})")]
    SumNonConvergence { terms: usize, partial: f64 },

    /// The estimating equation has no root in the searched region.
    #[error("no root found: {0}")]
    NoRoot(String),

    /// An iterative solver ran out of iterations.
    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    /// A configuration file failed validation.
    #[error("config error at `{field}`: {detail}")]
    Config { field: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            detail: detail.into(),
        }
    }

    /// True for errors caused by malformed input rather than numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Invalid { .. }
                | Error::Config { .. }
                | Error::Json(_)
                | Error::ParameterDomain { .. }
                | Error::ObservationSupport { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
