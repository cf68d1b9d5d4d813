use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("structural mismatch: {0}")]
    Structure(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("rank deficient basis: column {index} is dependent on earlier columns")]
    RankDeficient { index: usize },
    #[error("budget exceeded: {what} is {value}, cap is {cap}")]
    Budget { what: String, value: f64, cap: f64 },
    #[error("Kraft inequality violated: sum of exp(-delta) is {sum}")]
    Kraft { sum: f64 },
    #[error("invalid modulus: {0}")]
    Modulus(String),
    #[error("stream refused: {0}")]
    Refused(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn structure<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Structure(msg.into()))
}
