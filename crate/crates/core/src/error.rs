use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("enumeration budget exceeded: {count} ordered tuples > {budget}")]
    Budget { count: f64, budget: f64 },
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("series horizon exceeded: step {step} > allowed {allowed}")]
    Horizon { step: f64, allowed: f64 },
    #[error("series did not converge within {terms} terms (last term norm {last})")]
    NoConvergence { terms: usize, last: f64 },
    #[error("bound violated: {0}")]
    Bound(String),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
