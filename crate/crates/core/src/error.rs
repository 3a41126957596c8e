use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-stationary GARCH: alpha + beta = {0} >= 1")]
    NonStationary(f64),
    #[error("kurtosis is infinite: 1 - 2*alpha^2 - (alpha+beta)^2 = {0} <= 0")]
    InfiniteKurtosis(f64),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("sharpe ratio undefined: net PnL has zero variance")]
    ZeroVariance,
    #[error("ratio comparison needs a positive benchmark PnL (got {0}); use difference mode")]
    NonPositiveBenchmark(f64),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("action {action} outside range [{lo}, {hi}]")]
    ActionOutOfRange { action: f64, lo: f64, hi: f64 },
    #[error("config error: {0}")]
    Config(String),
    #[error("agent fault: {0}")]
    AgentFault(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn non_finite(what: impl Into<String>) -> Self {
        Error::NonFinite(what.into())
    }
}
