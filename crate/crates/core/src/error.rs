use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("scenario generation failed after {attempts} rejection attempts ({placed} of {requested} agents placed)")]
    ScenarioGeneration {
        attempts: usize,
        placed: usize,
        requested: usize,
    },

    #[error("non-finite loss {loss} at {context}")]
    NonFiniteLoss { loss: f64, context: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("parameter file {path}: {reason}")]
    ParamFormat { path: PathBuf, reason: String },

    #[error("missing parameters: {0}")]
    MissingParams(&'static str),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
