use std::path::PathBuf;

use mecvf::agents::AgentError;
use mecvf::env::EnvError;
use mecvf::model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot parse spec: {0}")]
    Parse(String),
    #[error("invalid spec field `{field}`: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("unknown plot kind `{0}`")]
    UnknownPlotKind(String),
    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },
}

impl HarnessError {
    /// Short failure class printed by the CLI.
    pub fn class(&self) -> &'static str {
        match self {
            HarnessError::Parse(_) | HarnessError::InvalidSpec { .. } | HarnessError::Model(_) => "config",
            HarnessError::Io { .. } | HarnessError::Csv(_) => "io",
            HarnessError::Agent(AgentError::Io { .. } | AgentError::Checkpoint(_)) => "checkpoint",
            HarnessError::Agent(AgentError::Dimension { .. }) => "dimension",
            HarnessError::Agent(_) | HarnessError::Env(_) => "runtime",
            HarnessError::UnknownPlotKind(_) => "usage",
            HarnessError::ChecksFailed { .. } => "check",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self.class() {
            "config" => 2,
            "io" => 3,
            "checkpoint" => 4,
            "dimension" => 5,
            "check" => 6,
            "usage" => 64,
            _ => 1,
        }
    }
}

pub fn io_error(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let path = path.into();
    move |source| HarnessError::Io { path, source }
}
