//! Constrained-MDP core: state/action vectors, step records, trajectories,
//! and discounted return arithmetic over the reward and cost channels.

use crate::error::{Error, Result};

fn check_finite(xs: &[f64], context: &'static str) -> Result<()> {
    for (index, &value) in xs.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                context,
                index,
                value,
            });
        }
    }
    Ok(())
}

/// Observation vector with a fixed per-environment dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVec(Vec<f64>);

impl StateVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "StateVec")?;
        Ok(StateVec(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for StateVec {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Continuous action vector; entries are clamped to the environment's action
/// box before stepping.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionVec(Vec<f64>);

impl ActionVec {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "ActionVec")?;
        Ok(ActionVec(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for ActionVec {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// One environment transition: the state acted from, the action, the reward
/// and cost it produced, and an optional constraint-reward annotation.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub state: StateVec,
    pub action: ActionVec,
    pub reward: f64,
    pub cost: f64,
    pub cor: Option<f64>,
    pub terminal: bool,
    pub truncated: bool,
}

impl StepRecord {
    pub fn validate(&self) -> Result<()> {
        if !self.reward.is_finite() {
            return Err(Error::NonFinite {
                context: "StepRecord.reward",
                index: 0,
                value: self.reward,
            });
        }
        if !self.cost.is_finite() || self.cost < 0.0 {
            return Err(Error::Invalid {
                what: "StepRecord.cost",
                why: format!("cost must be finite and nonnegative, got {}", self.cost),
            });
        }
        Ok(())
    }
}

/// An ordered, nonempty episode fragment. At most one step may be flagged
/// terminal or truncated and it must be the last one.
#[derive(Debug, Clone)]
pub struct Trajectory {
    steps: Vec<StepRecord>,
    pub seed: u64,
}

impl Trajectory {
    pub fn new(steps: Vec<StepRecord>, seed: u64) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::Invalid {
                what: "Trajectory",
                why: "trajectory must contain at least one step".into(),
            });
        }
        let last = steps.len() - 1;
        for (i, s) in steps.iter().enumerate() {
            s.validate()?;
            if i != last && (s.terminal || s.truncated) {
                return Err(Error::Invalid {
                    what: "Trajectory",
                    why: format!("step {i} flagged terminal/truncated before the final step"),
                });
            }
        }
        Ok(Trajectory { steps, seed })
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Replaces the per-step constraint-reward annotations. `cors` must have
    /// one entry per step.
    pub fn with_cor(&self, cors: &[f64]) -> Result<Trajectory> {
        if cors.len() != self.steps.len() {
            return Err(Error::DimMismatch {
                context: "Trajectory::with_cor",
                expected: self.steps.len(),
                actual: cors.len(),
            });
        }
        let mut steps = self.steps.clone();
        for (s, &c) in steps.iter_mut().zip(cors) {
            s.cor = Some(c);
        }
        Trajectory::new(steps, self.seed)
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.cost).collect()
    }
}

/// Static description of a CMDP: discount, constraint threshold, horizon,
/// and observation/action dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmdpSpec {
    pub gamma: f64,
    pub threshold_d: f64,
    pub horizon: usize,
    pub obs_dim: usize,
    pub act_dim: usize,
}

impl CmdpSpec {
    pub fn new(
        gamma: f64,
        threshold_d: f64,
        horizon: usize,
        obs_dim: usize,
        act_dim: usize,
    ) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Invalid {
                what: "CmdpSpec.gamma",
                why: format!("gamma must lie in (0,1), got {gamma}"),
            });
        }
        if !(threshold_d >= 0.0) {
            return Err(Error::Invalid {
                what: "CmdpSpec.threshold_d",
                why: format!("threshold must be nonnegative, got {threshold_d}"),
            });
        }
        if horizon == 0 {
            return Err(Error::Invalid {
                what: "CmdpSpec.horizon",
                why: "horizon must be at least 1".into(),
            });
        }
        if obs_dim == 0 || act_dim == 0 {
            return Err(Error::Invalid {
                what: "CmdpSpec dims",
                why: "obs_dim and act_dim must be positive".into(),
            });
        }
        Ok(CmdpSpec {
            gamma,
            threshold_d,
            horizon,
            obs_dim,
            act_dim,
        })
    }
}

/// Discounted sum of a scalar sequence: `sum_t gamma^t xs[t]`.
///
/// Rejects non-finite inputs; the empty sequence sums to zero.
pub fn discounted_sum(xs: &[f64], gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Invalid {
            what: "discounted_sum.gamma",
            why: format!("gamma must lie in (0,1), got {gamma}"),
        });
    }
    check_finite(xs, "discounted_sum")?;
    let mut acc = 0.0;
    let mut factor = 1.0;
    for &x in xs {
        acc += factor * x;
        factor *= gamma;
    }
    Ok(acc)
}

/// Discounted reward and cost returns of a trajectory under a spec.
pub fn trajectory_returns(traj: &Trajectory, spec: &CmdpSpec) -> Result<(f64, f64)> {
    if traj.len() > spec.horizon {
        return Err(Error::Invalid {
            what: "trajectory length",
            why: format!("{} steps exceed horizon {}", traj.len(), spec.horizon),
        });
    }
    for s in traj.steps() {
        if s.state.dim() != spec.obs_dim {
            return Err(Error::DimMismatch {
                context: "trajectory_returns state",
                expected: spec.obs_dim,
                actual: s.state.dim(),
            });
        }
    }
    let reward_return = discounted_sum(&traj.rewards(), spec.gamma)?;
    let cost_return = discounted_sum(&traj.costs(), spec.gamma)?;
    Ok((reward_return, cost_return))
}

/// Discounted constraint limit `d / (1 - gamma)`.
pub fn constraint_limit(spec: &CmdpSpec) -> f64 {
    spec.threshold_d / (1.0 - spec.gamma)
}
