use thiserror::Error;

/// Errors raised by the weighting library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("derivative vanished at x = {x}")]
    SingularDerivative { x: f64 },
    #[error("no convergence after {iterations} iterations (last x = {last})")]
    NonConvergence { iterations: usize, last: f64 },
    #[error("root not bracketed: f({lo}) = {flo}, f({hi}) = {fhi}")]
    Bracket { lo: f64, hi: f64, flo: f64, fhi: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
