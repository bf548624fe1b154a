use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A δ=0 calibration was requested with δ>0, or the other way round.
    #[error("wrong privacy variant: {0}")]
    WrongVariant(String),

    #[error("unsupported variant: {0}")]
    UnsupportedVariant(String),

    #[error("unsupported Rényi order {0}: only integer orders >= 2 are supported")]
    UnsupportedOrder(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("infeasible privacy target: {0}")]
    Infeasible(String),

    #[error("optimizer did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    Convergence { iterations: usize, grad_norm: f64 },

    #[error("inference budget exhausted: {used} of {budget} queries answered")]
    BudgetExhausted { used: u64, budget: u64 },

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// True for the budget refusal, which callers report as a distinct status.
    pub fn is_refusal(&self) -> bool {
        matches!(self, Error::BudgetExhausted { .. })
    }
}
