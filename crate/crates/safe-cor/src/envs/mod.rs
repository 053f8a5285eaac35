//! Miniature constrained environments: a 2-D goal-and-hazards arena and a
//! tabular chain with an exact dynamic-programming oracle.

pub mod chain;
pub mod point_goal;

use crate::cmdp::{ActionVec, CmdpSpec, StateVec, StepRecord};
use crate::error::Result;

pub use chain::{ChainCmdp, ChainCmdpConfig};
pub use point_goal::{PointGoalMini, PointGoalMiniConfig};

/// A single-owner mutable episode process. `step` records the observation the
/// action was taken from; the post-step observation is available through
/// `observation` (used to bootstrap truncated episodes).
pub trait Environment: Send {
    fn spec(&self) -> &CmdpSpec;
    fn reset(&mut self, seed: u64) -> StateVec;
    fn observation(&self) -> StateVec;
    fn step(&mut self, action: &ActionVec) -> Result<StepRecord>;
    fn episode_over(&self) -> bool;
}

/// Environment selection carried by configs; workers build their own
/// instances from it.
#[derive(Debug, Clone)]
pub enum EnvConfig {
    PointGoal(PointGoalMiniConfig),
    Chain(ChainCmdpConfig),
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        match self {
            EnvConfig::PointGoal(cfg) => Ok(Box::new(PointGoalMini::new(cfg.clone())?)),
            EnvConfig::Chain(cfg) => Ok(Box::new(ChainCmdp::new(cfg.clone())?)),
        }
    }

    pub fn spec(&self) -> Result<CmdpSpec> {
        Ok(self.build()?.spec().clone())
    }
}
