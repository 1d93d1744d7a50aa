//! The coupled market / power-flow / learning loop and its metrics.

mod env;
mod evaluate;
mod metrics;
mod scenario;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::grid::GridError;
use crate::market::MarketError;
use crate::prosumer::ProsumerError;
use crate::rl::RlError;

pub use env::{AgentStep, Environment, StepRecord};
pub use evaluate::{evaluate, load_learners, EvaluationReport};
pub use metrics::{moving_average, write_metrics_csv, write_steps_csv, EpisodeMetrics, MA_WINDOW};
pub use scenario::{DataSource, ScenarioConfig, BUNDLED_NETWORK, BUNDLED_PROFILES, BUNDLED_SCENARIO};
pub use train::{checkpoint_path, train, TrainOptions, Trainer, TrainingLog};

/// Problems with a scenario description, reported with the offending field path.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("invalid value at `{path}`: {reason}")]
    Invalid { path: String, reason: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl ScenarioError {
    pub(crate) fn invalid(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Invalid { path: path.into(), reason: reason.into() }
    }

    /// Dotted field path of the error, if it has one.
    pub fn path(&self) -> Option<&str> {
        match self {
            Self::Schema { path, .. } | Self::Invalid { path, .. } => Some(path),
            _ => None,
        }
    }
}

impl From<ProsumerError> for ScenarioError {
    fn from(e: ProsumerError) -> Self {
        match e {
            ProsumerError::InvalidConfig { field, reason } | ProsumerError::InvalidProfile { field, reason } => {
                Self::Invalid { path: field, reason }
            }
            other => Self::Invalid { path: String::new(), reason: other.to_string() },
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Prosumer(#[from] ProsumerError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error("non-finite {metric} in episode {episode}; diagnostics written to {}", dump.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "<none>".into()))]
    NonFinite { episode: usize, metric: String, dump: Option<PathBuf> },
    #[error("missing checkpoint for agent {agent}: {path}")]
    MissingCheckpoint { agent: usize, path: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
