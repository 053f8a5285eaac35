//! Tabular chain CMDP with slip noise and closed-form policy evaluation.
//! Serves as the exact oracle for the learner: values come from solving the
//! Bellman linear system, and a trained Gaussian policy maps to a tabular
//! one through the probability its 1-D action is nonnegative.

use libm::erfc;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cmdp::{ActionVec, CmdpSpec, StateVec, StepRecord};
use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::nn::GaussianPolicy;
use crate::seeding::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainCmdpConfig {
    pub n_states: usize,
    pub slip_prob: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub threshold_d: f64,
    pub rewards: Vec<f64>,
    pub costs: Vec<f64>,
}

impl Default for ChainCmdpConfig {
    fn default() -> Self {
        ChainCmdpConfig {
            n_states: 5,
            slip_prob: 0.1,
            gamma: 0.9,
            horizon: 100,
            threshold_d: 0.1,
            rewards: vec![0.0, 0.0, 0.0, 0.0, 1.0],
            costs: vec![0.0, 0.0, 1.0, 0.0, 0.0],
        }
    }
}

impl ChainCmdpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_states < 2 {
            return Err(Error::Invalid {
                what: "ChainCmdpConfig.n_states",
                why: format!("need at least 2 states, got {}", self.n_states),
            });
        }
        if !(0.0..1.0).contains(&self.slip_prob) {
            return Err(Error::Invalid {
                what: "ChainCmdpConfig.slip_prob",
                why: format!("must be in [0,1), got {}", self.slip_prob),
            });
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Invalid {
                what: "ChainCmdpConfig.gamma",
                why: format!("must be in [0,1), got {}", self.gamma),
            });
        }
        if self.horizon < 1 {
            return Err(Error::Invalid {
                what: "ChainCmdpConfig.horizon",
                why: "horizon must be at least 1".into(),
            });
        }
        for (name, table) in [("rewards", &self.rewards), ("costs", &self.costs)] {
            if table.len() != self.n_states {
                return Err(Error::DimMismatch {
                    context: "ChainCmdpConfig tables",
                    expected: self.n_states,
                    actual: table.len(),
                });
            }
            if let Some((i, &v)) = table.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "ChainCmdpConfig table",
                    index: i,
                    value: v,
                });
            }
            if name == "costs" && table.iter().any(|&v| v < 0.0) {
                return Err(Error::Invalid {
                    what: "ChainCmdpConfig.costs",
                    why: "costs must be nonnegative".into(),
                });
            }
        }
        Ok(())
    }

    /// Transition row for taking `go_right` in `s`: the intended neighbor
    /// with probability 1 − slip, the opposite neighbor with probability
    /// slip, both clamped at the ends. Rows sum to exactly 1.
    fn transition_row(&self, s: usize, go_right: bool) -> Vec<f64> {
        let n = self.n_states;
        let right = (s + 1).min(n - 1);
        let left = s.saturating_sub(1);
        let (intended, slipped) = if go_right { (right, left) } else { (left, right) };
        let mut row = vec![0.0; n];
        row[intended] += 1.0 - self.slip_prob;
        row[slipped] += self.slip_prob;
        row
    }
}

pub struct ChainCmdp {
    cfg: ChainCmdpConfig,
    spec: CmdpSpec,
    rng: ChaCha8Rng,
    state: usize,
    steps: usize,
    started: bool,
    over: bool,
}

impl ChainCmdp {
    pub fn new(cfg: ChainCmdpConfig) -> Result<Self> {
        cfg.validate()?;
        let spec = CmdpSpec::new(cfg.gamma, cfg.threshold_d, cfg.horizon, cfg.n_states, 1)?;
        Ok(ChainCmdp {
            cfg,
            spec,
            rng: stream_rng(0, &[]),
            state: 0,
            steps: 0,
            started: false,
            over: false,
        })
    }

    pub fn config(&self) -> &ChainCmdpConfig {
        &self.cfg
    }

    fn one_hot(&self, s: usize) -> StateVec {
        let mut v = vec![0.0; self.cfg.n_states];
        v[s] = 1.0;
        StateVec::new(v).expect("one-hot observation is finite")
    }
}

impl Environment for ChainCmdp {
    fn spec(&self) -> &CmdpSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> StateVec {
        self.rng = stream_rng(seed, &[0xc4a1]);
        self.state = 0;
        self.steps = 0;
        self.started = true;
        self.over = false;
        self.one_hot(self.state)
    }

    fn observation(&self) -> StateVec {
        self.one_hot(self.state)
    }

    fn step(&mut self, action: &ActionVec) -> Result<StepRecord> {
        if !self.started {
            return Err(Error::NotReset);
        }
        if self.over {
            return Err(Error::EpisodeOver);
        }
        if action.len() != 1 {
            return Err(Error::DimMismatch {
                context: "ChainCmdp action",
                expected: 1,
                actual: action.len(),
            });
        }
        let obs_before = self.one_hot(self.state);
        let reward = self.cfg.rewards[self.state];
        let cost = self.cfg.costs[self.state];

        let go_right = action[0] >= 0.0;
        let slipped = self.rng.random_range(0.0..1.0) < self.cfg.slip_prob;
        let move_right = go_right != slipped;
        self.state = if move_right {
            (self.state + 1).min(self.cfg.n_states - 1)
        } else {
            self.state.saturating_sub(1)
        };

        self.steps += 1;
        let truncated = self.steps >= self.cfg.horizon;
        self.over = truncated;
        Ok(StepRecord {
            state: obs_before,
            action: action.clone(),
            reward,
            cost,
            cor: None,
            terminal: false,
            truncated,
        })
    }

    fn episode_over(&self) -> bool {
        self.over
    }
}

/// Solves the Bellman linear systems `v = r + gamma * P_pi v` for the reward
/// and cost channels under a tabular policy given as per-state probabilities
/// of moving right. Returns the initial-state (state 0) values.
pub fn exact_policy_evaluation(cfg: &ChainCmdpConfig, p_right: &[f64]) -> Result<(f64, f64)> {
    cfg.validate()?;
    let n = cfg.n_states;
    if p_right.len() != n {
        return Err(Error::DimMismatch {
            context: "exact_policy_evaluation policy",
            expected: n,
            actual: p_right.len(),
        });
    }
    if let Some(&p) = p_right.iter().find(|&&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Invalid {
            what: "exact_policy_evaluation policy",
            why: format!("probability {p} outside [0,1]"),
        });
    }
    let mut p_pi = DMatrix::zeros(n, n);
    for s in 0..n {
        let right = cfg.transition_row(s, true);
        let left = cfg.transition_row(s, false);
        for t in 0..n {
            p_pi[(s, t)] = p_right[s] * right[t] + (1.0 - p_right[s]) * left[t];
        }
    }
    let a = DMatrix::identity(n, n) - p_pi * cfg.gamma;
    let lu = a.lu();
    let solve = |table: &[f64]| -> Result<f64> {
        let b = DVector::from_column_slice(table);
        let v = lu.solve(&b).ok_or(Error::SingularSystem {
            context: "chain Bellman system",
        })?;
        Ok(v[0])
    };
    Ok((solve(&cfg.rewards)?, solve(&cfg.costs)?))
}

/// Enumerates all deterministic tabular policies and returns the one with
/// the highest reward value at state 0 (ignoring costs), with its value.
pub fn optimal_unconstrained(cfg: &ChainCmdpConfig) -> Result<(Vec<f64>, f64)> {
    cfg.validate()?;
    let n = cfg.n_states;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for mask in 0u64..(1 << n) {
        let policy: Vec<f64> = (0..n)
            .map(|s| if mask >> s & 1 == 1 { 1.0 } else { 0.0 })
            .collect();
        let (j, _) = exact_policy_evaluation(cfg, &policy)?;
        if best.as_ref().is_none_or(|(_, bj)| j > *bj) {
            best = Some((policy, j));
        }
    }
    Ok(best.expect("at least one policy enumerated"))
}

/// Tabular projection of a Gaussian policy on the chain: per state, the
/// probability that its 1-D action is nonnegative, Phi(mean/std).
pub fn implied_tabular_policy(policy: &GaussianPolicy, cfg: &ChainCmdpConfig) -> Result<Vec<f64>> {
    if policy.obs_dim() != cfg.n_states || policy.act_dim() != 1 {
        return Err(Error::DimMismatch {
            context: "implied_tabular_policy",
            expected: cfg.n_states,
            actual: policy.obs_dim(),
        });
    }
    let mut p_right = Vec::with_capacity(cfg.n_states);
    for s in 0..cfg.n_states {
        let mut obs = vec![0.0; cfg.n_states];
        obs[s] = 1.0;
        let (mean, std) = policy.forward(&obs)?;
        // P(a >= 0) for a ~ N(mean, std^2)
        p_right.push(0.5 * erfc(-mean[0] / (std[0] * std::f64::consts::SQRT_2)));
    }
    Ok(p_right)
}

/// Monte-Carlo discounted returns of a tabular policy, simulated directly on
/// the chain dynamics. Returns (mean, standard error) per channel.
pub fn mc_policy_evaluation(
    cfg: &ChainCmdpConfig,
    p_right: &[f64],
    episodes: usize,
    seed: u64,
) -> Result<((f64, f64), (f64, f64))> {
    cfg.validate()?;
    if p_right.len() != cfg.n_states {
        return Err(Error::DimMismatch {
            context: "mc_policy_evaluation policy",
            expected: cfg.n_states,
            actual: p_right.len(),
        });
    }
    let mut rng = stream_rng(seed, &[0x3c]);
    let mut sums = [0.0f64; 2];
    let mut sq_sums = [0.0f64; 2];
    for _ in 0..episodes {
        let mut s = 0usize;
        let mut disc = 1.0;
        let mut ret_r = 0.0;
        let mut ret_c = 0.0;
        for _ in 0..cfg.horizon {
            ret_r += disc * cfg.rewards[s];
            ret_c += disc * cfg.costs[s];
            disc *= cfg.gamma;
            let go_right = rng.random_range(0.0..1.0) < p_right[s];
            let slipped = rng.random_range(0.0..1.0) < cfg.slip_prob;
            s = if go_right != slipped {
                (s + 1).min(cfg.n_states - 1)
            } else {
                s.saturating_sub(1)
            };
        }
        sums[0] += ret_r;
        sums[1] += ret_c;
        sq_sums[0] += ret_r * ret_r;
        sq_sums[1] += ret_c * ret_c;
    }
    let n = episodes as f64;
    let stats = |i: usize| {
        let mean = sums[i] / n;
        let var = (sq_sums[i] / n - mean * mean).max(0.0);
        (mean, (var / n).sqrt())
    };
    Ok((stats(0), stats(1)))
}
