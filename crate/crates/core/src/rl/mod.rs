//! From-scratch PPO for one independent learner.

pub mod adam;
pub mod learner;
pub mod mlp;
pub mod policy;
pub mod ppo;

use thiserror::Error;

pub use adam::{adam_step, AdamState};
pub use learner::{Checkpoint, Learner, RunningNorm, CHECKPOINT_VERSION};
pub use mlp::{glorot_init, Mlp};
pub use policy::{gaussian_log_prob, GaussianPolicy};
pub use ppo::{
    clipped_term, compute_advantages, critic_update, ppo_actor_update, PpoConfig, Transition,
    ValueTarget,
};

#[derive(Debug, Error, PartialEq)]
pub enum RlError {
    #[error("input has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite loss; update aborted and parameters restored")]
    NonFiniteLoss,
    #[error("update batch is empty")]
    EmptyBatch,
    #[error("invalid PPO setting `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}
