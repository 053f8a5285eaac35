//! Flat key-value JSON run configuration. Every key is a dot path like
//! `trainer.max_kl`; unknown keys are rejected so configs stay diffable and
//! typo-proof. The same dot paths drive `--override key=value` flags.

use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::cor::{load_demo_actions, load_demo_set, DemoSet};
use crate::envs::{ChainCmdpConfig, EnvConfig, PointGoalMiniConfig};
use crate::error::{Error, Result};
use crate::harness::eval::ScoreParams;
use crate::trainer::{AblationMode, ExpertMode, TrainerConfig};

/// Demonstration file locations; states are required per set, actions are
/// optional and only needed by the imitation-regularizer ablation.
#[derive(Debug, Clone, Default)]
pub struct DemoPaths {
    pub reward_states: Option<PathBuf>,
    pub reward_actions: Option<PathBuf>,
    pub safe_states: Option<PathBuf>,
    pub safe_actions: Option<PathBuf>,
}

impl DemoPaths {
    pub fn all_present(&self) -> bool {
        self.reward_states.is_some() && self.safe_states.is_some()
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub trainer: TrainerConfig,
    pub demos: DemoPaths,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub eval_episodes: usize,
    pub score: ScoreParams,
    /// Stage-1 training budget for each expert.
    pub expert_total_steps: usize,
    /// Episodes rolled per expert when generating demonstrations.
    pub demo_episodes: usize,
    /// Optional cap on demonstration states (uniform subsample).
    pub demo_max_states: Option<usize>,
}

fn cfg_err(key: &str, why: impl std::fmt::Display) -> Error {
    Error::Config(format!("key `{key}`: {why}"))
}

fn as_f64(key: &str, v: &Value) -> Result<f64> {
    v.as_f64().ok_or_else(|| cfg_err(key, format!("expected a number, got {v}")))
}

fn as_usize(key: &str, v: &Value) -> Result<usize> {
    v.as_u64()
        .map(|n| n as usize)
        .ok_or_else(|| cfg_err(key, format!("expected a nonnegative integer, got {v}")))
}

fn as_bool(key: &str, v: &Value) -> Result<bool> {
    v.as_bool().ok_or_else(|| cfg_err(key, format!("expected a boolean, got {v}")))
}

fn as_str(key: &str, v: &Value) -> Result<String> {
    v.as_str()
        .map(str::to_owned)
        .ok_or_else(|| cfg_err(key, format!("expected a string, got {v}")))
}

fn as_f64_vec(key: &str, v: &Value) -> Result<Vec<f64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| cfg_err(key, format!("expected an array of numbers, got {v}")))?;
    arr.iter().map(|x| as_f64(key, x)).collect()
}

fn as_usize_vec(key: &str, v: &Value) -> Result<Vec<usize>> {
    let arr = v
        .as_array()
        .ok_or_else(|| cfg_err(key, format!("expected an array of integers, got {v}")))?;
    arr.iter().map(|x| as_usize(key, x)).collect()
}

fn as_u64_vec(key: &str, v: &Value) -> Result<Vec<u64>> {
    let arr = v
        .as_array()
        .ok_or_else(|| cfg_err(key, format!("expected an array of integers, got {v}")))?;
    arr.iter()
        .map(|x| x.as_u64().ok_or_else(|| cfg_err(key, format!("expected a nonnegative integer, got {x}"))))
        .collect()
}

fn existing_path(key: &str, v: &Value) -> Result<PathBuf> {
    let p = PathBuf::from(as_str(key, v)?);
    if !p.exists() {
        return Err(Error::MissingFile(p));
    }
    Ok(p)
}

impl RunConfig {
    /// Reads a config file and applies `--override key=value` pairs on top,
    /// then interprets the merged map strictly.
    pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig> {
        let mut map = match path {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::MissingFile(p.to_path_buf()));
                }
                let text = std::fs::read_to_string(p)?;
                let value: Value = serde_json::from_str(&text)?;
                match value {
                    Value::Object(m) => m,
                    other => {
                        return Err(Error::Config(format!(
                            "config root must be a JSON object, got {other}"
                        )))
                    }
                }
            }
            None => Map::new(),
        };
        for (k, v) in overrides {
            map.insert(k.clone(), v.clone());
        }
        RunConfig::from_map(&map)
    }

    pub fn from_map(map: &Map<String, Value>) -> Result<RunConfig> {
        let kind = match map.get("env.kind") {
            Some(v) => as_str("env.kind", v)?,
            None => "point_goal".to_owned(),
        };
        let mut point = PointGoalMiniConfig::default();
        let mut chain = ChainCmdpConfig::default();
        let mut trainer = TrainerConfig::default();
        let mut trainer_gamma_set = false;
        let mut demos = DemoPaths::default();
        let mut seeds = vec![0u64];
        let mut out_dir = PathBuf::from("out");
        let mut eval_episodes = 20usize;
        let mut score = ScoreParams::default();
        let mut expert_total_steps: Option<usize> = None;
        let mut demo_episodes = 20usize;
        let mut demo_max_states: Option<usize> = None;

        for (key, v) in map {
            match (kind.as_str(), key.as_str()) {
                (_, "env.kind") => {}
                (_, "env.horizon") => {
                    point.horizon = as_usize(key, v)?;
                    chain.horizon = point.horizon;
                }
                (_, "env.threshold_d") => {
                    point.threshold_d = as_f64(key, v)?;
                    chain.threshold_d = point.threshold_d;
                }
                (_, "env.gamma") => {
                    point.gamma = as_f64(key, v)?;
                    chain.gamma = point.gamma;
                }
                ("point_goal", "env.arena_half_width") => point.arena_half_width = as_f64(key, v)?,
                ("point_goal", "env.n_hazards") => point.n_hazards = as_usize(key, v)?,
                ("point_goal", "env.hazard_radius") => point.hazard_radius = as_f64(key, v)?,
                ("point_goal", "env.goal_radius") => point.goal_radius = as_f64(key, v)?,
                ("point_goal", "env.max_speed") => point.max_speed = as_f64(key, v)?,
                ("point_goal", "env.dt") => point.dt = as_f64(key, v)?,
                ("point_goal", "env.goal_bonus") => point.goal_bonus = as_f64(key, v)?,
                ("chain", "env.n_states") => chain.n_states = as_usize(key, v)?,
                ("chain", "env.slip_prob") => chain.slip_prob = as_f64(key, v)?,
                ("chain", "env.rewards") => chain.rewards = as_f64_vec(key, v)?,
                ("chain", "env.costs") => chain.costs = as_f64_vec(key, v)?,
                (_, "trainer.gamma") => {
                    trainer.gamma = as_f64(key, v)?;
                    trainer_gamma_set = true;
                }
                (_, "trainer.gae_lambda") => trainer.gae_lambda = as_f64(key, v)?,
                (_, "trainer.clip_ratio") => trainer.clip_ratio = as_f64(key, v)?,
                (_, "trainer.max_kl") => trainer.max_kl = as_f64(key, v)?,
                (_, "trainer.learning_rate") => trainer.learning_rate = as_f64(key, v)?,
                (_, "trainer.lagrange_lr") => trainer.lagrange_lr = as_f64(key, v)?,
                (_, "trainer.epochs_per_batch") => trainer.epochs_per_batch = as_usize(key, v)?,
                (_, "trainer.steps_per_batch") => trainer.steps_per_batch = as_usize(key, v)?,
                (_, "trainer.total_steps") => trainer.total_steps = as_usize(key, v)?,
                (_, "trainer.ablation_mode") => {
                    let s = as_str(key, v)?;
                    trainer.ablation_mode = AblationMode::parse(&s).ok_or_else(|| {
                        cfg_err(key, format!("unknown mode `{s}` (off|rew_only|cost_only|both|bc_loglik)"))
                    })?;
                }
                (_, "trainer.bc_coef") => trainer.bc_coef = as_f64(key, v)?,
                (_, "trainer.expert_mode") => {
                    let s = as_str(key, v)?;
                    trainer.expert_mode = ExpertMode::parse(&s).ok_or_else(|| {
                        cfg_err(key, format!("unknown mode `{s}` (agent|reward_expert|safe_expert)"))
                    })?;
                }
                (_, "trainer.safe_expert_threshold") => {
                    trainer.safe_expert_threshold = as_f64(key, v)?
                }
                (_, "trainer.hidden") => trainer.hidden = as_usize_vec(key, v)?,
                (_, "trainer.log_std_init") => trainer.log_std_init = as_f64(key, v)?,
                (_, "trainer.workers") => trainer.workers = as_usize(key, v)?,
                (_, "trainer.cor_feature_mask") => {
                    trainer.cor_feature_mask = if v.is_null() {
                        None
                    } else {
                        Some(as_usize_vec(key, v)?)
                    };
                }
                (_, "trainer.cor_standardize") => trainer.cor_standardize = as_bool(key, v)?,
                (_, "cor.alpha") => trainer.cor.alpha = as_f64(key, v)?,
                (_, "cor.lambda_r") => trainer.cor.lambda_r = as_f64(key, v)?,
                (_, "cor.lambda_c") => trainer.cor.lambda_c = as_f64(key, v)?,
                (_, "demos.reward_states") => demos.reward_states = Some(existing_path(key, v)?),
                (_, "demos.reward_actions") => demos.reward_actions = Some(existing_path(key, v)?),
                (_, "demos.safe_states") => demos.safe_states = Some(existing_path(key, v)?),
                (_, "demos.safe_actions") => demos.safe_actions = Some(existing_path(key, v)?),
                (_, "run.seeds") => seeds = as_u64_vec(key, v)?,
                (_, "run.out_dir") => out_dir = PathBuf::from(as_str(key, v)?),
                (_, "run.eval_episodes") => eval_episodes = as_usize(key, v)?,
                (_, "run.score_lc") => score.l_c = as_f64(key, v)?,
                (_, "pipeline.expert_total_steps") => {
                    expert_total_steps = Some(as_usize(key, v)?)
                }
                (_, "pipeline.demo_episodes") => demo_episodes = as_usize(key, v)?,
                (_, "pipeline.demo_max_states") => {
                    demo_max_states = if v.is_null() { None } else { Some(as_usize(key, v)?) };
                }
                _ => {
                    return Err(Error::Config(format!(
                        "unknown config key `{key}` for env.kind `{kind}`"
                    )))
                }
            }
        }

        let env = match kind.as_str() {
            "point_goal" => EnvConfig::PointGoal(point),
            "chain" => EnvConfig::Chain(chain),
            other => {
                return Err(Error::Config(format!(
                    "key `env.kind`: unknown environment `{other}` (point_goal|chain)"
                )))
            }
        };
        let spec = env.spec()?;
        if !trainer_gamma_set {
            trainer.gamma = spec.gamma;
        }
        trainer.validate()?;
        score.validate()?;
        if seeds.is_empty() {
            return Err(Error::Config("key `run.seeds`: need at least one seed".into()));
        }
        if eval_episodes == 0 {
            return Err(Error::Config(
                "key `run.eval_episodes`: need at least one episode".into(),
            ));
        }
        if demo_episodes == 0 {
            return Err(Error::Config(
                "key `pipeline.demo_episodes`: need at least one episode".into(),
            ));
        }
        Ok(RunConfig {
            env,
            trainer: trainer.clone(),
            demos,
            seeds,
            out_dir,
            eval_episodes,
            score,
            expert_total_steps: expert_total_steps.unwrap_or(trainer.total_steps),
            demo_episodes,
            demo_max_states,
        })
    }

    /// Loads the demonstration sets named by the config, attaching action
    /// files where present. Returns `None` when no paths are configured.
    pub fn load_demo_sets(&self) -> Result<Option<(DemoSet, DemoSet)>> {
        let (Some(rs), Some(ss)) = (&self.demos.reward_states, &self.demos.safe_states) else {
            return Ok(None);
        };
        let mut reward = load_demo_set(rs)?;
        if let Some(ra) = &self.demos.reward_actions {
            reward = reward.with_actions(load_demo_actions(ra)?)?;
        }
        let mut safe = load_demo_set(ss)?;
        if let Some(sa) = &self.demos.safe_actions {
            safe = safe.with_actions(load_demo_actions(sa)?)?;
        }
        Ok(Some((reward, safe)))
    }
}

/// Parses one `key=value` override. Values parse as JSON first (numbers,
/// booleans, arrays) and fall back to bare strings, so
/// `--override trainer.ablation_mode=both` needs no quoting.
pub fn parse_override(arg: &str) -> Result<(String, Value)> {
    let (key, raw) = arg.split_once('=').ok_or_else(|| {
        Error::Config(format!("override `{arg}` must have the form key=value"))
    })?;
    if key.is_empty() {
        return Err(Error::Config(format!("override `{arg}` has an empty key")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    Ok((key.to_owned(), value))
}
