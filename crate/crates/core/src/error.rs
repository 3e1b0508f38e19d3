use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("quantile is infinite: {0}")]
    Infinite(String),

    /// A test or estimate could not be produced for this sample.
    #[error("unavailable: {0}")]
    Unavailable(String),

    #[error("estimated shape {xi} outside table range [{min}, {max}]; use the bootstrap p-value")]
    OutOfTableRange { xi: f64, min: f64, max: f64 },

    #[error("null table: {0}")]
    Table(String),

    #[error("threshold ladder: {0}")]
    Ladder(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
