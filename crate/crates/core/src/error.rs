//! Error taxonomy shared by every module in the crate.
//!
//! Three failure classes cover the whole surface: bad caller input, a CV
//! blocking design that cannot be realized on a given series length, and
//! numerical breakdown inside a factorization or quadrature routine.
//! Numerical failures carry the diagnostic that triggered them so callers
//! can distinguish "matrix not SPD" from "integral did not converge".

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller-supplied value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A fold plan cannot be built for the requested series length.
    /// The message names the offending fold.
    #[error("infeasible scheme: {0}")]
    InfeasibleScheme(String),

    /// A factorization, eigendecomposition, or quadrature failed.
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure(msg.into())
    }
}
