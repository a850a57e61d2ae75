use thiserror::Error;

/// Errors raised by the numerics library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or configuration (non-PSD covariance, bad exponents, ...).
    #[error("configuration error: {0}")]
    Config(String),
    /// An argument lies outside the domain of the operation (off-grid time, empty window, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// Hölder exponents do not admit the requested integral.
    #[error("regularity error: {0}")]
    Regularity(String),
    /// The linear part is not stable enough for the requested decay margin.
    #[error("stability error: {0}")]
    Stability(String),
    /// A user-supplied derivative oracle disagrees with finite differences, or a
    /// structural assumption on the fields fails.
    #[error("validation error: {0}")]
    Validation(String),
    /// The hypotheses of a comparison lemma are not satisfied.
    #[error("hypothesis error: {0}")]
    Hypothesis(String),
    /// A computation left the representable range where this is not permitted.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
