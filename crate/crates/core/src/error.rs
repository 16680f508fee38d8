use thiserror::Error;

/// Errors surfaced by the solvers and the CLI.
///
/// Variants split into two families: `Invalid*`/`Unsupported*` are caller
/// mistakes (exit code 1 on the command line), the rest are numerical
/// failures (exit code 2).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported configuration: {0}")]
    Unsupported(String),
    #[error("no closed-form steady mean for these parameters; use the master backend")]
    NoClosedForm,
    #[error("steady state is not unique: states {0:?} are all absorbing")]
    NonUniqueSteadyState(Vec<usize>),
    #[error("step size underflow at t = {time:e} (h = {step:e})")]
    StepUnderflow { time: f64, step: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// True for failures caused by the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonUniqueSteadyState(_) | Error::StepUnderflow { .. } | Error::Numerical(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
