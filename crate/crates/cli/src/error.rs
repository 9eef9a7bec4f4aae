use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] bsat::Error),
    #[error(transparent)]
    Forecast(#[from] bsat_forecast::Error),
    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("config is missing required key {0:?}")]
    MissingKey(String),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;
