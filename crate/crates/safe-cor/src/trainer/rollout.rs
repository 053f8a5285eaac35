//! On-policy rollout collection and generalized advantage estimation.

use crate::cmdp::{discounted_sum, ActionVec};
use crate::cor::CorEngine;
use crate::envs::EnvConfig;
use crate::error::{Error, Result};
use crate::nn::{GaussianPolicy, Mlp};
use crate::seeding::stream_rng;

/// Contiguous slice of a [`RolloutBatch`] holding one complete episode.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeSpan {
    pub start: usize,
    pub len: usize,
    pub truncated: bool,
    /// Seed the episode's environment was reset with.
    pub seed: u64,
}

impl EpisodeSpan {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Flattened steps of complete episodes plus everything the update needs:
/// collection-time log-probabilities, Gaussians, value estimates, shaped
/// channels, and (after [`RolloutBatch::annotate_advantages`]) advantages and
/// return targets.
#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub raw_rewards: Vec<f64>,
    pub raw_costs: Vec<f64>,
    pub cors: Vec<f64>,
    pub cor_enabled: bool,
    pub shaped_rewards: Vec<f64>,
    pub shaped_costs: Vec<f64>,
    pub logp_old: Vec<f64>,
    pub means_old: Vec<Vec<f64>>,
    pub stds_old: Vec<Vec<f64>>,
    pub values_r: Vec<f64>,
    pub values_c: Vec<f64>,
    pub bootstrap_r: Vec<f64>,
    pub bootstrap_c: Vec<f64>,
    pub episodes: Vec<EpisodeSpan>,
    pub adv_r: Vec<f64>,
    pub adv_c: Vec<f64>,
    pub ret_r: Vec<f64>,
    pub ret_c: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Constraint violations in the batch: steps with positive raw cost.
    pub fn violation_count(&self) -> usize {
        self.raw_costs.iter().filter(|&&c| c > 0.0).count()
    }

    pub fn mean_cor(&self) -> f64 {
        if self.cors.is_empty() {
            0.0
        } else {
            self.cors.iter().sum::<f64>() / self.cors.len() as f64
        }
    }

    /// Mean per-episode discounted shaped-cost return, the constraint
    /// estimate the multiplier reacts to.
    pub fn mean_discounted_shaped_cost(&self, gamma: f64) -> Result<f64> {
        let mut acc = 0.0;
        for ep in &self.episodes {
            acc += discounted_sum(&self.shaped_costs[ep.range()], gamma)?;
        }
        Ok(acc / self.episodes.len() as f64)
    }

    /// Fills the advantage and return-target vectors channel-wise from the
    /// shaped rewards/costs and the collection-time values.
    pub fn annotate_advantages(&mut self, gamma: f64, gae_lambda: f64) -> Result<()> {
        let n = self.len();
        self.adv_r = vec![0.0; n];
        self.adv_c = vec![0.0; n];
        self.ret_r = vec![0.0; n];
        self.ret_c = vec![0.0; n];
        for (e, ep) in self.episodes.iter().enumerate() {
            let r = ep.range();
            let (adv, ret) = compute_gae(
                &self.shaped_rewards[r.clone()],
                &self.values_r[r.clone()],
                self.bootstrap_r[e],
                gamma,
                gae_lambda,
            )?;
            self.adv_r[r.clone()].copy_from_slice(&adv);
            self.ret_r[r.clone()].copy_from_slice(&ret);
            let (adv, ret) = compute_gae(
                &self.shaped_costs[r.clone()],
                &self.values_c[r.clone()],
                self.bootstrap_c[e],
                gamma,
                gae_lambda,
            )?;
            self.adv_c[r.clone()].copy_from_slice(&adv);
            self.ret_c[r].copy_from_slice(&ret);
        }
        Ok(())
    }
}

/// Generalized advantage estimation over one episode. `bootstrap` is the
/// value of the state after the final step: the critic's estimate for
/// truncated episodes, zero for terminal ones.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    bootstrap: f64,
    gamma: f64,
    gae_lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() {
        return Err(Error::DimMismatch {
            context: "compute_gae",
            expected: rewards.len(),
            actual: values.len(),
        });
    }
    for (context, xs) in [("compute_gae rewards", rewards), ("compute_gae values", values)] {
        if let Some((i, &v)) = xs.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                context,
                index: i,
                value: v,
            });
        }
    }
    if !bootstrap.is_finite() {
        return Err(Error::NonFinite {
            context: "compute_gae bootstrap",
            index: 0,
            value: bootstrap,
        });
    }
    let t_max = rewards.len();
    let mut adv = vec![0.0; t_max];
    let mut next_adv = 0.0;
    for t in (0..t_max).rev() {
        let next_value = if t + 1 < t_max { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * gae_lambda * next_adv;
        adv[t] = next_adv;
    }
    let targets: Vec<f64> = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// Runs complete episodes until at least `steps_per_batch` steps have been
/// gathered. With `workers > 1`, each worker collects an equal share on its
/// own environment instance and results are merged in worker order; episode
/// seeds depend only on (run_seed, worker, batch, episode), so a fixed worker
/// count reproduces batches bitwise.
#[allow(clippy::too_many_arguments)]
pub fn collect_rollouts(
    policy: &GaussianPolicy,
    value_r: &Mlp,
    value_c: &Mlp,
    env_cfg: &EnvConfig,
    engine: Option<&CorEngine>,
    lambdas: (f64, f64),
    run_seed: u64,
    batch_index: u64,
    steps_per_batch: usize,
    workers: usize,
) -> Result<RolloutBatch> {
    if steps_per_batch == 0 {
        return Err(Error::Invalid {
            what: "collect_rollouts.steps_per_batch",
            why: "must be positive".into(),
        });
    }
    let workers = workers.max(1);
    let quota = steps_per_batch.div_ceil(workers);

    let mut parts: Vec<RolloutBatch> = if workers == 1 {
        vec![collect_worker(
            policy, value_r, value_c, env_cfg, engine, lambdas, run_seed, 0, batch_index, quota,
        )?]
    } else {
        let mut slots: Vec<Option<Result<RolloutBatch>>> = (0..workers).map(|_| None).collect();
        std::thread::scope(|scope| {
            let mut handles = Vec::with_capacity(workers);
            for w in 0..workers {
                handles.push(scope.spawn(move || {
                    collect_worker(
                        policy, value_r, value_c, env_cfg, engine, lambdas, run_seed, w as u64,
                        batch_index, quota,
                    )
                }));
            }
            for (slot, handle) in slots.iter_mut().zip(handles) {
                *slot = Some(handle.join().expect("rollout worker panicked"));
            }
        });
        slots
            .into_iter()
            .map(|s| s.expect("worker slot filled"))
            .collect::<Result<Vec<_>>>()?
    };

    let mut merged = parts.remove(0);
    for part in parts {
        let offset = merged.len();
        merged.states.extend(part.states);
        merged.actions.extend(part.actions);
        merged.raw_rewards.extend(part.raw_rewards);
        merged.raw_costs.extend(part.raw_costs);
        merged.cors.extend(part.cors);
        merged.shaped_rewards.extend(part.shaped_rewards);
        merged.shaped_costs.extend(part.shaped_costs);
        merged.logp_old.extend(part.logp_old);
        merged.means_old.extend(part.means_old);
        merged.stds_old.extend(part.stds_old);
        merged.values_r.extend(part.values_r);
        merged.values_c.extend(part.values_c);
        merged.bootstrap_r.extend(part.bootstrap_r);
        merged.bootstrap_c.extend(part.bootstrap_c);
        merged.episodes.extend(part.episodes.into_iter().map(|ep| EpisodeSpan {
            start: ep.start + offset,
            ..ep
        }));
    }
    Ok(merged)
}

#[allow(clippy::too_many_arguments)]
fn collect_worker(
    policy: &GaussianPolicy,
    value_r: &Mlp,
    value_c: &Mlp,
    env_cfg: &EnvConfig,
    engine: Option<&CorEngine>,
    lambdas: (f64, f64),
    run_seed: u64,
    worker: u64,
    batch_index: u64,
    quota: usize,
) -> Result<RolloutBatch> {
    let mut env = env_cfg.build()?;
    let mut batch = RolloutBatch {
        cor_enabled: engine.is_some(),
        ..RolloutBatch::default()
    };
    let mut episode: u64 = 0;
    while batch.len() < quota {
        let env_seed = crate::seeding::mix_seed(run_seed, &[0xe0, worker, batch_index, episode]);
        let mut act_rng = stream_rng(run_seed, &[0xac, worker, batch_index, episode]);
        let mut obs = env.reset(env_seed).to_vec();
        let start = batch.len();
        loop {
            let sampled = policy.sample_detailed(&obs, &mut act_rng)?;
            let action = ActionVec::new(sampled.action.clone())?;
            let rec = env.step(&action)?;
            debug_assert_eq!(rec.state.to_vec(), obs);

            let cor = match engine {
                Some(eng) => eng.cor(&obs)?,
                None => 0.0,
            };
            batch.shaped_rewards.push(rec.reward + lambdas.0 * cor);
            batch.shaped_costs.push(rec.cost + lambdas.1 * cor);
            batch.cors.push(cor);
            batch.raw_rewards.push(rec.reward);
            batch.raw_costs.push(rec.cost);
            batch.values_r.push(value_r.scalar(&obs)?);
            batch.values_c.push(value_c.scalar(&obs)?);
            batch.logp_old.push(sampled.log_prob);
            batch.means_old.push(sampled.mean);
            batch.stds_old.push(sampled.std);
            batch.states.push(obs);
            batch.actions.push(sampled.action);

            if rec.terminal || rec.truncated {
                let (br, bc) = if rec.truncated {
                    let last = env.observation();
                    (value_r.scalar(&last)?, value_c.scalar(&last)?)
                } else {
                    (0.0, 0.0)
                };
                batch.bootstrap_r.push(br);
                batch.bootstrap_c.push(bc);
                batch.episodes.push(EpisodeSpan {
                    start,
                    len: batch.len() - start,
                    truncated: rec.truncated,
                    seed: env_seed,
                });
                break;
            }
            obs = env.observation().to_vec();
        }
        episode += 1;
    }
    Ok(batch)
}
