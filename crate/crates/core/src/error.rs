use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid matching constants: {0}")]
    Constants(String),

    #[error("non-finite template response at t = {t}, theta2 = {theta2}")]
    Evaluation { t: f64, theta2: f64 },

    #[error("integration step failed at t = {t}: {reason}")]
    Step { t: f64, reason: String },

    #[error("parameter validity check failed: {0}")]
    Validity(String),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("failed to read image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
