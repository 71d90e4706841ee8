use perturbrl_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid numeric input to a model or metric (non-finite, out of domain).
    #[error("domain error: {0}")]
    Domain(String),
    /// An experiment or disturbance configuration violates an invariant.
    #[error("config error: {0}")]
    Config(String),
    /// API misuse, e.g. stepping a finished episode.
    #[error("usage error: {0}")]
    Usage(String),
    /// Training produced non-finite parameters or losses.
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}
