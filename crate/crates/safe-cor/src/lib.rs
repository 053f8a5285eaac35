//! Constrained reinforcement learning with expert-derived constraint rewards.
//!
//! The crate trains a Gaussian policy with a clipped-surrogate Lagrangian
//! update on miniature constrained MDPs. Reward and cost channels can be
//! shaped by a constraint reward computed from two expert demonstration sets,
//! which accelerates constraint satisfaction without giving up task reward.

pub mod cmdp;
pub mod cor;
pub mod envs;
pub mod error;
pub mod harness;
pub mod nn;
pub mod seeding;
pub mod trainer;

pub use error::{Error, Result};
