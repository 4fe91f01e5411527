use std::path::PathBuf;

use mgpg_core::{LearnerError, ScenarioError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{what}, line {line}: {message}")]
    Parse { what: &'static str, line: usize, message: String },
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error("run {arm}/{seed} is not reproducible: rerun diverged at episode {episode}")]
    NonReproducible { arm: String, seed: u64, episode: usize },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| HarnessError::Io { path, source }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
