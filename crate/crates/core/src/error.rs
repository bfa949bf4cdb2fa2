use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {left} vs {right}; align grids with grid_approximation or refine first")]
    GridMismatch { left: String, right: String },

    #[error("level {requested} is finer than the base level {base}")]
    LevelTooFine { requested: u8, base: u8 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("insufficient scales: need at least {needed} levels with non-zero counts, got {got}")]
    InsufficientScales { needed: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("config error at key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("model error: {0}")]
    Model(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("quadrature check failed: max deviation {deviation:.3e} exceeds tolerance {tolerance:.1e}")]
    Quadrature { deviation: f64, tolerance: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
