use thiserror::Error;

use crate::linsolve::LinsolveError;

/// Errors raised by the solvers and builders in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected} nodes, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error(transparent)]
    Linsolve(#[from] LinsolveError),

    #[error("operator is not coercive: estimated c_a = {c_a:e}")]
    NotCoercive { c_a: f64 },

    #[error("off-diagonal entry ({row}, {col}) = {value:e} is positive but T-monotonicity was requested")]
    SignPattern { row: usize, col: usize, value: f64 },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("QVI iteration hit max_iter = {iterations}; last step {last_step:e}, last contraction ratio {ratio:e}")]
    IterationLimit {
        iterations: usize,
        last_step: f64,
        ratio: f64,
    },

    #[error("hypothesis check failed: {0}")]
    Hypothesis(String),

    #[error("monotonicity violated at step {step}: node {node} moved by {violation:e} against the expected direction")]
    Monotonicity {
        step: usize,
        node: usize,
        violation: f64,
    },

    #[error("Lipschitz certificate {value:e} does not satisfy the required bound {bound:e}")]
    Certificate { value: f64, bound: f64 },

    #[error("Armijo line search failed after {halvings} halvings")]
    LineSearch { halvings: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
