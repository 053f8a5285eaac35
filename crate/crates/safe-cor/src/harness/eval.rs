//! Checkpoint evaluation: rolls seeded episodes with the stored policy and
//! aggregates the metric suite (reward/cost sums, violations, cost rate, and
//! the combined score).

use std::path::Path;

use crate::cmdp::Trajectory;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, GaussianPolicy};
use crate::seeding::{mix_seed, stream_rng};

/// Weight of the cost term in the combined score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreParams {
    pub l_c: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        ScoreParams { l_c: 5.0 }
    }
}

impl ScoreParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.l_c >= 0.0 && self.l_c.is_finite()) {
            return Err(Error::Invalid {
                what: "ScoreParams.l_c",
                why: format!("must be nonnegative and finite, got {}", self.l_c),
            });
        }
        Ok(())
    }
}

/// Combined score: reward penalized by `l_c` times the cost.
pub fn score(reward: f64, cost: f64, params: &ScoreParams) -> f64 {
    reward - params.l_c * cost
}

/// One evaluation record. `reward_return` and `cost_return` are undiscounted
/// per-episode sums; `cv` counts cost-positive steps; `total_cv` is the
/// cumulative training-phase count and stays zero for pure evaluation rows
/// (comparison tables fill it from the training log).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalRow {
    pub reward_return: f64,
    pub cost_return: f64,
    pub cv: f64,
    pub total_cv: f64,
    pub cost_rate: f64,
    pub score: f64,
}

impl EvalRow {
    pub fn csv_fields(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.reward_return, self.cost_return, self.cv, self.total_cv, self.cost_rate, self.score
        )
    }
}

pub const EVAL_FIELDS_HEADER: &str = "reward_return,cost_return,cv,total_cv,cost_rate,score";

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub aggregate: EvalRow,
    pub episodes: Vec<EvalRow>,
}

/// Rolls `episodes` complete episodes with actions sampled from the policy.
/// Episode seeds derive from `(seed, episode index)`, so repeated calls with
/// equal inputs reproduce trajectories bitwise.
pub fn roll_episodes(
    policy: &GaussianPolicy,
    env_cfg: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    let mut env = env_cfg.build()?;
    let spec = env.spec().clone();
    if policy.obs_dim() != spec.obs_dim {
        return Err(Error::DimMismatch {
            context: "roll_episodes observation",
            expected: spec.obs_dim,
            actual: policy.obs_dim(),
        });
    }
    if policy.act_dim() != spec.act_dim {
        return Err(Error::DimMismatch {
            context: "roll_episodes action",
            expected: spec.act_dim,
            actual: policy.act_dim(),
        });
    }
    let mut out = Vec::with_capacity(episodes);
    for ep in 0..episodes {
        let env_seed = mix_seed(seed, &[0xeba1, ep as u64]);
        let mut act_rng = stream_rng(seed, &[0xeba2, ep as u64]);
        let mut obs = env.reset(env_seed);
        let mut steps = Vec::with_capacity(spec.horizon);
        while !env.episode_over() {
            let (action, _) = policy.sample(&obs, &mut act_rng)?;
            let record = env.step(&crate::cmdp::ActionVec::new(action)?)?;
            steps.push(record);
            obs = env.observation();
        }
        out.push(Trajectory::new(steps, env_seed)?);
    }
    Ok(out)
}

fn episode_row(traj: &Trajectory, params: &ScoreParams) -> EvalRow {
    let reward_return: f64 = traj.rewards().iter().sum();
    let cost_return: f64 = traj.costs().iter().sum();
    let cv = traj.steps().iter().filter(|s| s.cost > 0.0).count() as f64;
    let cost_rate = cost_return / traj.len() as f64;
    EvalRow {
        reward_return,
        cost_return,
        cv,
        total_cv: 0.0,
        cost_rate,
        score: score(reward_return, cost_return, params),
    }
}

/// Evaluates a checkpoint over `n_episodes` per seed. The aggregate row is
/// the field-wise mean over every episode; its score recomputes from the
/// aggregated reward and cost, which agrees with the per-episode mean because
/// the score is linear.
pub fn evaluate(
    checkpoint: &Checkpoint,
    env_cfg: &EnvConfig,
    n_episodes: usize,
    seeds: &[u64],
    params: &ScoreParams,
) -> Result<Evaluation> {
    params.validate()?;
    if n_episodes == 0 || seeds.is_empty() {
        return Err(Error::Invalid {
            what: "evaluate",
            why: "need at least one episode and one seed".into(),
        });
    }
    let mut episodes = Vec::with_capacity(n_episodes * seeds.len());
    for &seed in seeds {
        for traj in roll_episodes(&checkpoint.policy, env_cfg, n_episodes, seed)? {
            episodes.push(episode_row(&traj, params));
        }
    }
    let n = episodes.len() as f64;
    let mut aggregate = EvalRow::default();
    for row in &episodes {
        aggregate.reward_return += row.reward_return;
        aggregate.cost_return += row.cost_return;
        aggregate.cv += row.cv;
        aggregate.cost_rate += row.cost_rate;
    }
    aggregate.reward_return /= n;
    aggregate.cost_return /= n;
    aggregate.cv /= n;
    aggregate.cost_rate /= n;
    aggregate.score = score(aggregate.reward_return, aggregate.cost_return, params);
    Ok(Evaluation { aggregate, episodes })
}

/// Writes the per-episode table with a leading episode index column.
pub fn write_eval_csv(path: &Path, eval: &Evaluation) -> Result<()> {
    let mut out = String::new();
    out.push_str("episode,");
    out.push_str(EVAL_FIELDS_HEADER);
    out.push('\n');
    for (i, row) in eval.episodes.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i, row.csv_fields()));
    }
    out.push_str(&format!("mean,{}\n", eval.aggregate.csv_fields()));
    std::fs::write(path, out)?;
    Ok(())
}
