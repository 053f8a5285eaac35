//! The constrained learner: clipped-surrogate Lagrangian policy optimization
//! over CoR-shaped reward and cost channels, with expert-training modes and
//! an imitation-regularizer ablation.

pub mod metrics;
pub mod rollout;
pub mod update;

use std::path::Path;

use crate::cmdp::{ActionVec, StateVec, StepRecord, Trajectory};
use crate::cor::{CorEngine, CorParams, DemoSet};
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::{Adam, Checkpoint, GaussianPolicy, Mlp};
use crate::seeding::stream_rng;

pub use metrics::{read_metrics_csv, write_metrics_csv, TrainMetricsRow, METRICS_HEADER};
pub use rollout::{collect_rollouts, compute_gae, EpisodeSpan, RolloutBatch};
pub use update::{
    bc_grad, bc_log_likelihood, clipped_surrogate_grad, clipped_surrogate_loss,
    combined_advantages, lagrange_update, ppo_lagrangian_update, LagrangeState, UpdateStats,
};

/// Which channels the constraint reward shapes, or the imitation-regularizer
/// alternative that uses the reward expert's state-action pairs directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    Off,
    RewOnly,
    CostOnly,
    Both,
    BcLoglik,
}

impl AblationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            AblationMode::Off => "off",
            AblationMode::RewOnly => "rew_only",
            AblationMode::CostOnly => "cost_only",
            AblationMode::Both => "both",
            AblationMode::BcLoglik => "bc_loglik",
        }
    }

    pub fn parse(s: &str) -> Option<AblationMode> {
        match s {
            "off" => Some(AblationMode::Off),
            "rew_only" => Some(AblationMode::RewOnly),
            "cost_only" => Some(AblationMode::CostOnly),
            "both" => Some(AblationMode::Both),
            "bc_loglik" => Some(AblationMode::BcLoglik),
            _ => None,
        }
    }

    /// Effective shaping coefficients. The imitation mode leaves both
    /// channels unshaped; it acts through the objective instead.
    pub fn effective_lambdas(&self, cor: &CorParams) -> (f64, f64) {
        match self {
            AblationMode::Off | AblationMode::BcLoglik => (0.0, 0.0),
            AblationMode::RewOnly => (cor.lambda_r, 0.0),
            AblationMode::CostOnly => (0.0, cor.lambda_c),
            AblationMode::Both => (cor.lambda_r, cor.lambda_c),
        }
    }
}

/// Role of the run in the expert pipeline. Experts never see CoR shaping:
/// the reward expert trains unconstrained (multiplier frozen at zero), the
/// safe expert trains against a tightened threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpertMode {
    Agent,
    RewardExpert,
    SafeExpert,
}

impl ExpertMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExpertMode::Agent => "agent",
            ExpertMode::RewardExpert => "reward_expert",
            ExpertMode::SafeExpert => "safe_expert",
        }
    }

    pub fn parse(s: &str) -> Option<ExpertMode> {
        match s {
            "agent" => Some(ExpertMode::Agent),
            "reward_expert" => Some(ExpertMode::RewardExpert),
            "safe_expert" => Some(ExpertMode::SafeExpert),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub max_kl: f64,
    pub learning_rate: f64,
    pub lagrange_lr: f64,
    pub epochs_per_batch: usize,
    pub steps_per_batch: usize,
    pub total_steps: usize,
    pub cor: CorParams,
    pub ablation_mode: AblationMode,
    pub bc_coef: f64,
    pub expert_mode: ExpertMode,
    pub safe_expert_threshold: f64,
    /// Hidden layer widths; full-scale setups typically use 256/512 units.
    pub hidden: Vec<usize>,
    pub log_std_init: f64,
    pub workers: usize,
    pub cor_feature_mask: Option<Vec<usize>>,
    pub cor_standardize: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            max_kl: 0.001,
            learning_rate: 3e-4,
            lagrange_lr: 0.05,
            epochs_per_batch: 10,
            steps_per_batch: 4000,
            total_steps: 200_000,
            cor: CorParams::default(),
            ablation_mode: AblationMode::Off,
            bc_coef: 0.1,
            expert_mode: ExpertMode::Agent,
            safe_expert_threshold: 0.005,
            hidden: vec![64, 64],
            log_std_init: -0.5,
            workers: 1,
            cor_feature_mask: None,
            cor_standardize: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &'static str, why: String| Err(Error::Invalid { what, why });
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad("TrainerConfig.clip_ratio", format!("must be in (0,1), got {}", self.clip_ratio));
        }
        if !(self.max_kl > 0.0) {
            return bad("TrainerConfig.max_kl", format!("must be positive, got {}", self.max_kl));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("TrainerConfig.gamma", format!("must be in [0,1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("TrainerConfig.gae_lambda", format!("must be in [0,1], got {}", self.gae_lambda));
        }
        if !(self.learning_rate > 0.0) {
            return bad("TrainerConfig.learning_rate", "must be positive".into());
        }
        if self.lagrange_lr < 0.0 {
            return bad("TrainerConfig.lagrange_lr", "must be nonnegative".into());
        }
        if self.epochs_per_batch == 0 || self.steps_per_batch == 0 {
            return bad("TrainerConfig.epochs", "epochs_per_batch and steps_per_batch must be positive".into());
        }
        if self.bc_coef < 0.0 {
            return bad("TrainerConfig.bc_coef", "must be nonnegative".into());
        }
        if self.safe_expert_threshold < 0.0 {
            return bad("TrainerConfig.safe_expert_threshold", "must be nonnegative".into());
        }
        if self.hidden.is_empty() || self.hidden.iter().any(|&h| h == 0) {
            return bad("TrainerConfig.hidden", "need at least one nonzero hidden layer".into());
        }
        if self.workers == 0 {
            return bad("TrainerConfig.workers", "need at least one worker".into());
        }
        self.cor.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<TrainMetricsRow>,
}

/// Rebuilds per-episode trajectories from a flattened batch (demo
/// generation and analysis path).
pub fn rollout_to_trajectories(batch: &RolloutBatch) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(batch.episodes.len());
    for ep in &batch.episodes {
        let mut steps = Vec::with_capacity(ep.len);
        for i in ep.range() {
            let last = i + 1 == ep.start + ep.len;
            steps.push(StepRecord {
                state: StateVec::new(batch.states[i].clone())?,
                action: ActionVec::new(batch.actions[i].clone())?,
                reward: batch.raw_rewards[i],
                cost: batch.raw_costs[i],
                cor: batch.cor_enabled.then(|| batch.cors[i]),
                terminal: last && !ep.truncated,
                truncated: last && ep.truncated,
            });
        }
        out.push(Trajectory::new(steps, ep.seed)?);
    }
    Ok(out)
}

/// Full training run: collect, estimate advantages, adapt the multiplier,
/// update, and log one metrics row per batch. Returns the final networks and
/// the metrics log; persistence is the caller's concern.
pub fn train(
    cfg: &TrainerConfig,
    env_cfg: &EnvConfig,
    demos: Option<(&DemoSet, &DemoSet)>,
    run_seed: u64,
) -> Result<TrainResult> {
    cfg.validate()?;
    let spec = env_cfg.spec()?;
    if (cfg.gamma - spec.gamma).abs() > 1e-12 {
        return Err(Error::Invalid {
            what: "TrainerConfig.gamma",
            why: format!(
                "trainer gamma {} disagrees with environment gamma {}",
                cfg.gamma, spec.gamma
            ),
        });
    }

    let (ablation, multiplier_frozen, threshold_d) = match cfg.expert_mode {
        ExpertMode::Agent => (cfg.ablation_mode, false, spec.threshold_d),
        ExpertMode::RewardExpert => (AblationMode::Off, true, spec.threshold_d),
        ExpertMode::SafeExpert => (AblationMode::Off, false, cfg.safe_expert_threshold),
    };
    let lambdas = ablation.effective_lambdas(&cfg.cor);
    let engine = if lambdas != (0.0, 0.0) {
        let (reward_set, safe_set) = demos.ok_or_else(|| Error::Invalid {
            what: "train.demos",
            why: "CoR shaping enabled but no demonstration sets supplied".into(),
        })?;
        Some(CorEngine::new(
            reward_set,
            safe_set,
            cfg.cor,
            cfg.cor_feature_mask.clone(),
            cfg.cor_standardize,
        )?)
    } else {
        None
    };
    let bc_demo = if ablation == AblationMode::BcLoglik {
        let (reward_set, _) = demos.ok_or_else(|| Error::Invalid {
            what: "train.demos",
            why: "imitation regularizer enabled but no demonstration sets supplied".into(),
        })?;
        if reward_set.actions().is_none() {
            return Err(Error::Invalid {
                what: "train.demos",
                why: "imitation regularizer needs a reward demo set with actions".into(),
            });
        }
        Some((reward_set, cfg.bc_coef))
    } else {
        None
    };

    let mut init_rng = stream_rng(run_seed, &[0x171]);
    let mut policy = GaussianPolicy::new(
        spec.obs_dim,
        spec.act_dim,
        &cfg.hidden,
        cfg.log_std_init,
        &mut init_rng,
    )?;
    let mut value_dims = Vec::with_capacity(cfg.hidden.len() + 2);
    value_dims.push(spec.obs_dim);
    value_dims.extend_from_slice(&cfg.hidden);
    value_dims.push(1);
    let mut value_r = Mlp::orthogonal("value_reward", &value_dims, 1.0, 1.0, &mut init_rng)?;
    let mut value_c = Mlp::orthogonal("value_cost", &value_dims, 1.0, 1.0, &mut init_rng)?;
    let mut policy_adam = Adam::new(policy.n_params(), cfg.learning_rate);
    let mut vr_adam = Adam::new(value_r.params().len(), cfg.learning_rate);
    let mut vc_adam = Adam::new(value_c.params().len(), cfg.learning_rate);

    let limit = threshold_d / (1.0 - spec.gamma);
    let n_batches = if cfg.total_steps == 0 {
        0
    } else {
        cfg.total_steps.div_ceil(cfg.steps_per_batch)
    };

    let mut lagrange = LagrangeState::default();
    let mut rows = Vec::with_capacity(n_batches);
    let mut total_cv = 0.0f64;
    let mut steps_done = 0u64;

    for b in 0..n_batches {
        let in_batch = |e: Error| Error::Stage {
            stage: format!("training batch {}", b + 1),
            source: Box::new(e),
        };
        let mut batch = collect_rollouts(
            &policy,
            &value_r,
            &value_c,
            env_cfg,
            engine.as_ref(),
            lambdas,
            run_seed,
            b as u64,
            cfg.steps_per_batch,
            cfg.workers,
        )
        .map_err(in_batch)?;
        batch
            .annotate_advantages(cfg.gamma, cfg.gae_lambda)
            .map_err(in_batch)?;
        if !multiplier_frozen {
            lagrange =
                lagrange_update(&lagrange, &batch, limit, cfg.gamma, cfg.lagrange_lr)
                    .map_err(in_batch)?;
        }
        let stats = ppo_lagrangian_update(
            &batch,
            &mut policy,
            &mut policy_adam,
            &mut value_r,
            &mut vr_adam,
            &mut value_c,
            &mut vc_adam,
            lagrange.multiplier,
            cfg.clip_ratio,
            cfg.max_kl,
            cfg.epochs_per_batch,
            bc_demo,
            b as u64,
        )
        .map_err(in_batch)?;

        let n_eps = batch.episodes.len() as f64;
        let mut reward_sum = 0.0;
        let mut cost_sum = 0.0;
        for ep in &batch.episodes {
            reward_sum += batch.raw_rewards[ep.range()].iter().sum::<f64>();
            cost_sum += batch.raw_costs[ep.range()].iter().sum::<f64>();
        }
        let cv = batch.violation_count() as f64;
        total_cv += cv;
        steps_done += batch.len() as u64;
        rows.push(TrainMetricsRow {
            batch: (b + 1) as u64,
            steps: steps_done,
            avg_reward_return: reward_sum / n_eps,
            avg_cost_return: cost_sum / n_eps,
            cost_rate: batch.raw_costs.iter().sum::<f64>() / batch.len() as f64,
            cv,
            total_cv,
            multiplier: lagrange.multiplier,
            kl: stats.kl,
            cor_mean: batch.mean_cor(),
        });
    }

    Ok(TrainResult {
        checkpoint: Checkpoint {
            policy,
            value_reward: value_r,
            value_cost: value_c,
        },
        metrics: rows,
    })
}

/// Convenience wrapper that also persists `metrics.csv` and
/// `checkpoint.txt` into `out_dir`.
pub fn train_to_dir(
    cfg: &TrainerConfig,
    env_cfg: &EnvConfig,
    demos: Option<(&DemoSet, &DemoSet)>,
    run_seed: u64,
    out_dir: &Path,
) -> Result<TrainResult> {
    let result = train(cfg, env_cfg, demos, run_seed)?;
    std::fs::create_dir_all(out_dir)?;
    write_metrics_csv(&out_dir.join("metrics.csv"), &result.metrics)?;
    crate::nn::save_checkpoint(&result.checkpoint, &out_dir.join("checkpoint.txt"))?;
    Ok(result)
}
