use thiserror::Error;

use crate::systems::Trajectory;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("trajectory diverged at step {step}")]
    Diverged { step: usize, partial: Box<Trajectory> },

    #[error("singular control at step {step}: |eta| = {eta:e} at x = {x:?}")]
    SingularControl { step: usize, eta: f64, x: Vec<f64> },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
