use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation precondition (shape, range, ordering).
    #[error("contract violation: {0}")]
    Contract(String),
    /// The input is well-formed but outside the mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("non-finite value {value} in loss term `{term}`")]
    NonFinite { term: &'static str, value: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! contract {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use contract;
