//! End-to-end experiment orchestration: train the two experts, distill their
//! rollouts into demonstration files, train baseline and shaped agents per
//! seed, and emit comparison tables. Every stage leaves its artifacts on disk
//! and is skipped on rerun when they already exist.

use std::path::{Path, PathBuf};

use crate::cor::{build_demo_set, save_demo_actions, save_demo_set, DemoLabel, DemoSet};
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::eval::{evaluate, roll_episodes, EvalRow};
use crate::nn::{load_checkpoint, GaussianPolicy};
use crate::seeding::mix_seed;
use crate::trainer::{read_metrics_csv, train_to_dir, AblationMode, ExpertMode, TrainerConfig};

pub const COMPARISON_HEADER: &str = "variant,seed,reward_return,cost_return,cv,total_cv,cost_rate,score";

/// One comparison line: a variant/seed pair (or a per-variant `median` row)
/// with the evaluation metrics and the training-phase cumulative violations.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub variant: String,
    pub seed: String,
    pub metrics: EvalRow,
}

impl ComparisonRow {
    fn to_csv(&self) -> String {
        format!("{},{},{}", self.variant, self.seed, self.metrics.csv_fields())
    }
}

pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(COMPARISON_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_comparison_csv(path: &Path) -> Result<Vec<ComparisonRow>> {
    let text = std::fs::read_to_string(path)?;
    let parse_err = |line: usize, why: String| Error::Parse {
        path: path.display().to_string(),
        line,
        why,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == COMPARISON_HEADER => {}
        Some((_, h)) => return Err(parse_err(1, format!("unexpected header `{h}`"))),
        None => return Err(parse_err(1, "empty file".into())),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(parse_err(idx + 1, format!("expected 8 fields, got {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| parse_err(idx + 1, format!("field {}: {e}", i + 1)))
        };
        rows.push(ComparisonRow {
            variant: fields[0].to_owned(),
            seed: fields[1].to_owned(),
            metrics: EvalRow {
                reward_return: num(2)?,
                cost_return: num(3)?,
                cv: num(4)?,
                total_cv: num(5)?,
                cost_rate: num(6)?,
                score: num(7)?,
            },
        });
    }
    Ok(rows)
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| Error::Stage {
        stage: name.to_owned(),
        source: Box::new(e),
    })
}

fn expert_dir(cfg: &RunConfig, mode: ExpertMode) -> PathBuf {
    cfg.out_dir.join("experts").join(mode.as_str())
}

fn demo_paths(cfg: &RunConfig) -> [PathBuf; 4] {
    let d = cfg.out_dir.join("demos");
    [
        d.join("reward_states.txt"),
        d.join("reward_actions.txt"),
        d.join("safe_states.txt"),
        d.join("safe_actions.txt"),
    ]
}

fn agent_dir(base: &Path, variant: AblationMode, seed: u64) -> PathBuf {
    base.join(variant.as_str()).join(format!("seed_{seed}"))
}

/// Rolls `episodes` seeded episodes with `policy` and writes the resulting
/// demonstration set (states plus aligned actions). Returns the saved set.
pub fn generate_demos(
    policy: &GaussianPolicy,
    env: &EnvConfig,
    episodes: usize,
    label: DemoLabel,
    max_states: Option<usize>,
    seed: u64,
    states_path: &Path,
    actions_path: &Path,
) -> Result<DemoSet> {
    let trajs = roll_episodes(policy, env, episodes, seed)?;
    let set = build_demo_set(&trajs, label, max_states, mix_seed(seed, &[0xd5]))?;
    if let Some(parent) = states_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_demo_set(&set, states_path)?;
    save_demo_actions(&set, actions_path)?;
    Ok(set)
}

fn train_expert(cfg: &RunConfig, mode: ExpertMode) -> Result<()> {
    let dir = expert_dir(cfg, mode);
    if dir.join("checkpoint.txt").exists() {
        return Ok(());
    }
    let trainer = TrainerConfig {
        expert_mode: mode,
        ablation_mode: AblationMode::Off,
        total_steps: cfg.expert_total_steps,
        ..cfg.trainer.clone()
    };
    let tag = match mode {
        ExpertMode::RewardExpert => 0x9e1,
        ExpertMode::SafeExpert => 0x9e2,
        ExpertMode::Agent => 0x9e0,
    };
    let run_seed = mix_seed(cfg.seeds[0], &[tag]);
    train_to_dir(&trainer, &cfg.env, None, run_seed, &dir)?;
    Ok(())
}

fn ensure_demos(cfg: &RunConfig) -> Result<()> {
    let [rs, ra, ss, sa] = demo_paths(cfg);
    if rs.exists() && ra.exists() && ss.exists() && sa.exists() {
        return Ok(());
    }
    let reward_ckpt = load_checkpoint(&expert_dir(cfg, ExpertMode::RewardExpert).join("checkpoint.txt"))?;
    let safe_ckpt = load_checkpoint(&expert_dir(cfg, ExpertMode::SafeExpert).join("checkpoint.txt"))?;
    generate_demos(
        &reward_ckpt.policy,
        &cfg.env,
        cfg.demo_episodes,
        DemoLabel::RewardExpert,
        cfg.demo_max_states,
        mix_seed(cfg.seeds[0], &[0xd01]),
        &rs,
        &ra,
    )?;
    generate_demos(
        &safe_ckpt.policy,
        &cfg.env,
        cfg.demo_episodes,
        DemoLabel::SafeExpert,
        cfg.demo_max_states,
        mix_seed(cfg.seeds[0], &[0xd02]),
        &ss,
        &sa,
    )?;
    Ok(())
}

/// Loads the pipeline's own demo files, falling back to paths named in the
/// config. Actions attach when their files exist.
fn load_pipeline_demos(cfg: &RunConfig) -> Result<(DemoSet, DemoSet)> {
    let [rs, ra, ss, sa] = demo_paths(cfg);
    if rs.exists() && ss.exists() {
        let mut reward = crate::cor::load_demo_set(&rs)?;
        if ra.exists() {
            reward = reward.with_actions(crate::cor::load_demo_actions(&ra)?)?;
        }
        let mut safe = crate::cor::load_demo_set(&ss)?;
        if sa.exists() {
            safe = safe.with_actions(crate::cor::load_demo_actions(&sa)?)?;
        }
        return Ok((reward, safe));
    }
    cfg.load_demo_sets()?.ok_or_else(|| Error::MissingFile(rs))
}

fn train_agent(
    cfg: &RunConfig,
    base: &Path,
    variant: AblationMode,
    seed: u64,
    demos: Option<&(DemoSet, DemoSet)>,
) -> Result<()> {
    let dir = agent_dir(base, variant, seed);
    if dir.join("checkpoint.txt").exists() {
        return Ok(());
    }
    let trainer = TrainerConfig {
        expert_mode: ExpertMode::Agent,
        ablation_mode: variant,
        ..cfg.trainer.clone()
    };
    let demo_refs = demos.map(|(r, s)| (r, s));
    train_to_dir(&trainer, &cfg.env, demo_refs, seed, &dir)?;
    Ok(())
}

/// Evaluates one run directory and merges the final training `total_cv`
/// into the row.
fn eval_run_dir(cfg: &RunConfig, dir: &Path, seed: u64) -> Result<EvalRow> {
    let ckpt = load_checkpoint(&dir.join("checkpoint.txt"))?;
    let eval = evaluate(&ckpt, &cfg.env, cfg.eval_episodes, &[seed], &cfg.score)?;
    let mut row = eval.aggregate;
    let metrics = read_metrics_csv(&dir.join("metrics.csv"))?;
    row.total_cv = metrics.last().map_or(0.0, |m| m.total_cv);
    Ok(row)
}

/// Four sequential stages: experts, demonstrations, per-seed agents
/// (baseline and both-channels shaping), and the comparison table. Returns
/// the artifact directory.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    stage("experts", || {
        train_expert(cfg, ExpertMode::RewardExpert)?;
        train_expert(cfg, ExpertMode::SafeExpert)
    })?;
    stage("demos", || ensure_demos(cfg))?;
    let variants = [AblationMode::Off, AblationMode::Both];
    let agents_base = cfg.out_dir.join("agents");
    stage("agents", || {
        let demos = load_pipeline_demos(cfg)?;
        for &variant in &variants {
            for &seed in &cfg.seeds {
                let demos = (variant != AblationMode::Off).then_some(&demos);
                train_agent(cfg, &agents_base, variant, seed, demos)?;
            }
        }
        Ok(())
    })?;
    stage("comparison", || {
        let path = cfg.out_dir.join("comparison.csv");
        if path.exists() {
            return Ok(());
        }
        let mut rows = Vec::new();
        for &variant in &variants {
            for &seed in &cfg.seeds {
                let dir = agent_dir(&agents_base, variant, seed);
                rows.push(ComparisonRow {
                    variant: variant.as_str().to_owned(),
                    seed: seed.to_string(),
                    metrics: eval_run_dir(cfg, &dir, seed)?,
                });
            }
        }
        write_comparison_csv(&path, &rows)
    })?;
    Ok(cfg.out_dir.clone())
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("non-finite metric"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn median_row(variant: &str, rows: &[&ComparisonRow]) -> ComparisonRow {
    let pick = |f: fn(&EvalRow) -> f64| median(rows.iter().map(|r| f(&r.metrics)).collect());
    ComparisonRow {
        variant: variant.to_owned(),
        seed: "median".to_owned(),
        metrics: EvalRow {
            reward_return: pick(|m| m.reward_return),
            cost_return: pick(|m| m.cost_return),
            cv: pick(|m| m.cv),
            total_cv: pick(|m| m.total_cv),
            cost_rate: pick(|m| m.cost_rate),
            score: pick(|m| m.score),
        },
    }
}

pub const ABLATION_VARIANTS: [AblationMode; 5] = [
    AblationMode::Off,
    AblationMode::RewOnly,
    AblationMode::CostOnly,
    AblationMode::Both,
    AblationMode::BcLoglik,
];

/// Trains and evaluates every shaping variant across the config seeds and
/// writes `ablation.csv`: one row per (variant, seed) followed by one median
/// row per variant. Demonstrations must already exist (config paths or a
/// prior pipeline run in the same output directory).
pub fn ablation_grid(cfg: &RunConfig) -> Result<PathBuf> {
    let base = cfg.out_dir.join("ablation");
    let path = cfg.out_dir.join("ablation.csv");
    stage("ablation", || {
        std::fs::create_dir_all(&base)?;
        let demos = load_pipeline_demos(cfg)?;
        let mut rows = Vec::new();
        for &variant in &ABLATION_VARIANTS {
            for &seed in &cfg.seeds {
                let demo_refs = (variant != AblationMode::Off).then_some(&demos);
                train_agent(cfg, &base, variant, seed, demo_refs)?;
                let dir = agent_dir(&base, variant, seed);
                rows.push(ComparisonRow {
                    variant: variant.as_str().to_owned(),
                    seed: seed.to_string(),
                    metrics: eval_run_dir(cfg, &dir, seed)?,
                });
            }
        }
        let mut medians = Vec::new();
        for &variant in &ABLATION_VARIANTS {
            let group: Vec<&ComparisonRow> = rows
                .iter()
                .filter(|r| r.variant == variant.as_str())
                .collect();
            medians.push(median_row(variant.as_str(), &group));
        }
        rows.extend(medians);
        write_comparison_csv(&path, &rows)
    })?;
    Ok(path)
}
