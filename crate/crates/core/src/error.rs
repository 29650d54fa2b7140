use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("integration failed at tau = {tau}: {reason}")]
    IntegrationFailure {
        tau: f64,
        reason: String,
        last_state: Vec<f64>,
    },
    #[error("ill-conditioned variational matrix (condition number {0:e})")]
    IllConditioned(f64),
    #[error("blow-up detected at t = {t}")]
    BlowUp { t: f64 },
    #[error("point outside evolved region: {0}")]
    OutOfDomain(String),
    #[error("insufficient data: {0}")]
    Insufficient(String),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(vec![msg.into()])
    }
}
