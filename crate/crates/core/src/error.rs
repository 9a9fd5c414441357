use thiserror::Error;

/// Errors produced by the policy-iteration toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid problem data: {0}")]
    InvalidProblem(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("trajectory diverged at t = {time}: state {state:?}")]
    Divergence { time: f64, state: Vec<f64> },

    #[error("Euler-shifted collocation point {index} is not finite")]
    ShiftDivergence { index: usize },

    #[error(
        "collocation system is singular or ill-conditioned (condition estimate {condition:.3e}); \
         try a smaller dt or a different kernel lengthscale"
    )]
    Solver { condition: f64 },

    #[error("matrix is not Hurwitz (max real eigenvalue part {max_real:.3e})")]
    Stability { max_real: f64 },

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("degenerate domain: {0}")]
    DegenerateDomain(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            got,
        })
    }
}
