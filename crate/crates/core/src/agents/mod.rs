//! Decision algorithms: the TD3 family (distributed DTD3, TD3, DDPG), two
//! metaheuristics over static decisions, and the uniform reference split.

mod actor_critic;
mod search;
mod train;

pub use actor_critic::{clipped_double_q_target, ActorCritic, AgentDims, AgentKind, Batch, UpdateMetrics};
pub use search::{pso_optimize, sa_optimize, CostOracle, SearchResult, SnapshotOracle};
pub use train::{dims_for, episode_seeds, greedy_episode, train, train_agent, EpisodeRecord};

pub use crate::queueing::uniform_policy;

use std::path::PathBuf;

use thiserror::Error;

use crate::env::EnvError;
use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("{what} dimension mismatch: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("checkpoint I/O at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(#[from] serde_json::Error),
}
