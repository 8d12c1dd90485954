use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CoindError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoindError {
    #[error("constraint violated: {0}")]
    Constraint(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("weights are not normalized (sum = {sum})")]
    Unnormalized { sum: f64 },

    #[error("attribute {attribute} value {value} never observed in training support")]
    UnobservedValue { attribute: usize, value: usize },

    #[error("unsupported fragment at {node}: {reason}")]
    UnsupportedFragment { node: String, reason: String },

    #[error("parse error at column {position}: {message}\n  {input}\n  {caret}")]
    Parse {
        position: usize,
        message: String,
        input: String,
        caret: String,
    },

    #[error("non-finite loss at step {step} (score {score_loss}, ci {ci_loss}, grad norm {grad_norm})")]
    NonFinite {
        step: usize,
        score_loss: f64,
        ci_loss: f64,
        grad_norm: f64,
    },

    #[error("sampler diverged at t={t}: |x| = {norm:e}")]
    Divergence { t: usize, norm: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CoindError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoindError::Io {
            path: path.into(),
            source,
        }
    }
}
