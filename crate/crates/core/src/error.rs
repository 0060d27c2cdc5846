use alloc::string::String;

/// Errors raised by the numerical operations of this crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("field has {got} values, grid expects {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite value at site {site}")]
    NonFinite { site: usize },
    #[error("right-hand side is not mean-zero (sum {sum:e}, allowed {allowed:e})")]
    NotMeanZero { sum: f64, allowed: f64 },
    #[error("configuration is not conserved: total mass {total}, sites {sites}")]
    NotConserved { total: f64, sites: usize },
    #[error("conjugate gradient did not converge after {iterations} iterations (relative residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invariant `{check}` violated (residual {residual:e})")]
    InvariantViolated { check: &'static str, residual: f64 },
    #[error("site {0:?} is outside the domain")]
    SiteOutOfRange(alloc::vec::Vec<i64>),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name, reason: reason.into() }
    }
}
