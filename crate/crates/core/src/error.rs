use thiserror::Error;

/// Errors raised by the numerical layer and the scenario runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid spec mismatch: {0}")]
    SpecMismatch(String),
    #[error("time {t} is not an integer multiple of the grid spacing {h}")]
    Alignment { t: f64, h: f64 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("level mismatch: {0}")]
    LevelMismatch(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("integration failure: {0}")]
    IntegrationFailure(String),
    #[error("series did not converge: {0}")]
    SeriesDivergence(String),
    #[error("operator sum exceeds the term cap of {cap}")]
    TermCap { cap: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid report: {0}")]
    Report(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
