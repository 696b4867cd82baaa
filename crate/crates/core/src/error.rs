use thiserror::Error;

/// Failures reported by the evaluators, solvers and oracles.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A log argument or square root left its admissible range. Solvers treat
    /// this as a rejected step, never clamp it.
    #[error("out of domain: {0}")]
    OutOfDomain(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("no convergence after {iterations} iterations (best residual {best_residual:.3e})")]
    NonConvergence {
        iterations: usize,
        best_residual: f64,
    },
    #[error("could not bracket the capacity root: {0}")]
    Bracketing(String),
}

pub type Result<T> = std::result::Result<T, Error>;
