//! Centralized-critic, decentralized-actor learner (MADDPG) for discrete phase actions.
//!
//! Each agent owns an actor `obs -> 4 logits` and a critic over the joint
//! observation and joint one-hot action. Training uses a straight-through
//! Gumbel-softmax relaxation of the actor's own action; evaluation takes the
//! argmax of the logits.

mod buffer;
mod checkpoint;
mod nn;
mod trainer;

use std::path::PathBuf;

use thiserror::Error;

pub use buffer::{Batch, ReplayBuffer};
pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use nn::{argmax, clip_grad_norm, param_count, softmax_rows, Adam, Mlp, MlpCache};
pub use trainer::{
    actor_loss_grad, critic_input, critic_input_dim, critic_loss_grad, gumbel_noise, layer_sizes, sample_relaxed,
    soft_update, td_targets, AgentLosses, Maddpg, TrainerConfig, NUM_ACTIONS,
};

#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape { what: &'static str, expected: usize, got: usize },
    #[error("non-finite training values for agent {agent}: {detail}")]
    NonFinite { agent: usize, detail: String },
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    NotEnoughData { have: usize, need: usize },
    #[error("invalid trainer config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: corrupt checkpoint: {detail}", path.display())]
    Format { path: PathBuf, detail: String },
}
