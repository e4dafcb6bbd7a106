//! Small dense networks with hand-written backpropagation, Adam, Polyak
//! averaging and a uniform replay buffer. Everything is `f64`.

mod adam;
mod mlp;
mod replay;

pub use adam::{Adam, AdamConfig};
pub use mlp::{Activation, Dense, ForwardCache, Gradients, Mlp};
pub use replay::{ReplayBuffer, Transition};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite gradient; update skipped")]
    NonFinite,
    #[error("replay buffer holds {size} transitions, batch needs {batch}")]
    NotReady { size: usize, batch: usize },
}
