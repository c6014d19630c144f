use thiserror::Error;

/// Errors produced by the forward model, the solvers and the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("integration failed at t = {t:.6} s: {reason}")]
    Integration { t: f64, reason: String },

    #[error("bundle error: {0}")]
    Bundle(String),

    #[error("estimation failed: {0}")]
    Estimation(String),

    #[error("solver invariant violated: {0}")]
    Invariant(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
