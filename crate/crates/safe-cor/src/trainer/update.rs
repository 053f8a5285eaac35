//! Clipped-surrogate Lagrangian policy update and multiplier adaptation.

use crate::cor::DemoSet;
use crate::error::{Error, Result};
use crate::nn::{Adam, GaussianPolicy, Mlp};
use crate::trainer::rollout::RolloutBatch;

/// Nonnegative constraint multiplier plus a smoothed estimate of the
/// discounted cost return it reacts to.
#[derive(Debug, Clone, Copy)]
pub struct LagrangeState {
    pub multiplier: f64,
    pub cost_estimate: f64,
    initialized: bool,
}

impl Default for LagrangeState {
    fn default() -> Self {
        LagrangeState {
            multiplier: 0.0,
            cost_estimate: 0.0,
            initialized: false,
        }
    }
}

/// Projected-ascent step on the multiplier:
/// `nu <- max(0, nu + lr * (C_hat - limit))`, where `C_hat` is the batch's
/// mean per-episode discounted shaped-cost return. The running estimate is
/// smoothed with factor 0.9.
pub fn lagrange_update(
    state: &LagrangeState,
    batch: &RolloutBatch,
    limit: f64,
    gamma: f64,
    lagrange_lr: f64,
) -> Result<LagrangeState> {
    let cost_hat = batch.mean_discounted_shaped_cost(gamma)?;
    let multiplier = (state.multiplier + lagrange_lr * (cost_hat - limit)).max(0.0);
    let cost_estimate = if state.initialized {
        0.9 * state.cost_estimate + 0.1 * cost_hat
    } else {
        cost_hat
    };
    Ok(LagrangeState {
        multiplier,
        cost_estimate,
        initialized: true,
    })
}

/// Per-step objective weights: reward advantages are normalized over the
/// batch, cost advantages enter raw to preserve the constraint scale, and the
/// combination is `(adv_r_norm - nu * adv_c) / (1 + nu)`.
pub fn combined_advantages(batch: &RolloutBatch, multiplier: f64) -> Vec<f64> {
    let n = batch.adv_r.len() as f64;
    let mean = batch.adv_r.iter().sum::<f64>() / n;
    let var = batch.adv_r.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    batch
        .adv_r
        .iter()
        .zip(&batch.adv_c)
        .map(|(&ar, &ac)| {
            let norm = (ar - mean) / (std + 1e-8);
            (norm - multiplier * ac) / (1.0 + multiplier)
        })
        .collect()
}

/// Negated clipped surrogate averaged over the batch (a loss to minimize):
/// `-(1/N) sum_i min(ratio_i * adv_i, clip(ratio_i) * adv_i)`.
pub fn clipped_surrogate_loss(
    policy: &GaussianPolicy,
    batch: &RolloutBatch,
    adv: &[f64],
    clip_ratio: f64,
) -> Result<f64> {
    let n = batch.len() as f64;
    let mut acc = 0.0;
    for i in 0..batch.len() {
        let logp = policy.log_prob(&batch.states[i], &batch.actions[i])?;
        let ratio = (logp - batch.logp_old[i]).exp();
        let clipped = ratio.clamp(1.0 - clip_ratio, 1.0 + clip_ratio);
        acc += (ratio * adv[i]).min(clipped * adv[i]);
    }
    Ok(-acc / n)
}

/// Gradient of [`clipped_surrogate_loss`] with respect to the policy
/// parameters (flat layout), accumulated into `grad`. Returns the loss.
pub fn clipped_surrogate_grad(
    policy: &GaussianPolicy,
    batch: &RolloutBatch,
    adv: &[f64],
    clip_ratio: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let n = batch.len() as f64;
    let mut acc = 0.0;
    for i in 0..batch.len() {
        let logp = policy.log_prob(&batch.states[i], &batch.actions[i])?;
        let ratio = (logp - batch.logp_old[i]).exp();
        let clipped = ratio.clamp(1.0 - clip_ratio, 1.0 + clip_ratio);
        let a = adv[i];
        acc += (ratio * a).min(clipped * a);
        // the min picks the unclipped branch exactly when the ratio has not
        // left the trust band in the direction the advantage pushes it
        let active = if a >= 0.0 { ratio <= 1.0 + clip_ratio } else { ratio >= 1.0 - clip_ratio };
        if active {
            policy.log_prob_grad(&batch.states[i], &batch.actions[i], -ratio * a / n, grad)?;
        }
    }
    Ok(-acc / n)
}

/// Mean expert log-likelihood over a demonstration set carrying actions.
pub fn bc_log_likelihood(policy: &GaussianPolicy, demo: &DemoSet) -> Result<f64> {
    let actions = demo.actions().ok_or_else(|| Error::Invalid {
        what: "bc_log_likelihood",
        why: "demonstration set carries no actions".into(),
    })?;
    let mut acc = 0.0;
    for i in 0..demo.count() {
        acc += policy.log_prob(demo.state_row(i), actions.row(i))?;
    }
    Ok(acc / demo.count() as f64)
}

/// Accumulates `coef * d(mean log-likelihood)/d(params)` into `grad` and
/// returns the mean log-likelihood.
pub fn bc_grad(policy: &GaussianPolicy, demo: &DemoSet, coef: f64, grad: &mut [f64]) -> Result<f64> {
    let actions = demo.actions().ok_or_else(|| Error::Invalid {
        what: "bc_grad",
        why: "demonstration set carries no actions".into(),
    })?;
    let per_row = coef / demo.count() as f64;
    let mut acc = 0.0;
    for i in 0..demo.count() {
        acc += policy.log_prob_grad(demo.state_row(i), actions.row(i), per_row, grad)?;
    }
    Ok(acc / demo.count() as f64)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UpdateStats {
    /// KL(new || collection policy) of the last accepted epoch.
    pub kl: f64,
    pub epochs_accepted: usize,
    pub policy_loss: f64,
    pub value_loss_r: f64,
    pub value_loss_c: f64,
    pub bc_loglik: f64,
}

fn value_step(
    net: &mut Mlp,
    adam: &mut Adam,
    states: &[Vec<f64>],
    targets: &[f64],
) -> Result<f64> {
    let n = states.len() as f64;
    let mut grad = vec![0.0; net.params().len()];
    let mut loss = 0.0;
    for (s, &t) in states.iter().zip(targets) {
        let v = net.scalar_grad_with(s, |v| 2.0 * (v - t) / n, &mut grad)?;
        loss += (v - t) * (v - t);
    }
    adam.step(net.params_mut(), &grad)?;
    Ok(loss / n)
}

/// One batch worth of optimization: per epoch the value heads regress to
/// their return targets, then the policy takes a trial gradient step that is
/// kept only while KL(new || old) stays within `max_kl`; the first violating
/// trial is rolled back (parameters and optimizer state) and the epoch loop
/// stops, so consecutive accepted policies never drift past the bound.
#[allow(clippy::too_many_arguments)]
pub fn ppo_lagrangian_update(
    batch: &RolloutBatch,
    policy: &mut GaussianPolicy,
    policy_adam: &mut Adam,
    value_r: &mut Mlp,
    vr_adam: &mut Adam,
    value_c: &mut Mlp,
    vc_adam: &mut Adam,
    multiplier: f64,
    clip_ratio: f64,
    max_kl: f64,
    epochs_per_batch: usize,
    bc: Option<(&DemoSet, f64)>,
    batch_index: u64,
) -> Result<UpdateStats> {
    if batch.adv_r.len() != batch.len() {
        return Err(Error::Invalid {
            what: "ppo_lagrangian_update",
            why: "batch advantages not annotated".into(),
        });
    }
    let adv = combined_advantages(batch, multiplier);
    let mut stats = UpdateStats::default();
    let mut flat = Vec::new();
    let mut snapshot = Vec::new();

    for _ in 0..epochs_per_batch {
        stats.value_loss_r = value_step(value_r, vr_adam, &batch.states, &batch.ret_r)?;
        stats.value_loss_c = value_step(value_c, vc_adam, &batch.states, &batch.ret_c)?;

        policy.get_flat(&mut snapshot);
        let adam_snapshot = policy_adam.clone();

        let mut grad = vec![0.0; policy.n_params()];
        let mut loss = clipped_surrogate_grad(policy, batch, &adv, clip_ratio, &mut grad)?;
        let mut bc_loglik = 0.0;
        if let Some((demo, bc_coef)) = bc {
            bc_loglik = bc_grad(policy, demo, -bc_coef, &mut grad)?;
            loss -= bc_coef * bc_loglik;
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                context: "policy objective",
                batch: batch_index,
            });
        }

        policy.get_flat(&mut flat);
        policy_adam.step(&mut flat, &grad)?;
        policy.set_flat(&flat)?;

        let mut kl = 0.0;
        for i in 0..batch.len() {
            kl += policy.kl_from(&batch.states[i], &batch.means_old[i], &batch.stds_old[i])?;
        }
        kl /= batch.len() as f64;
        if !kl.is_finite() {
            return Err(Error::NonFiniteLoss {
                context: "policy KL estimate",
                batch: batch_index,
            });
        }

        if kl > max_kl {
            policy.set_flat(&snapshot)?;
            *policy_adam = adam_snapshot;
            break;
        }
        stats.kl = kl;
        stats.epochs_accepted += 1;
        stats.policy_loss = loss;
        stats.bc_loglik = bc_loglik;
    }

    policy.check_finite()?;
    value_r.check_finite()?;
    value_c.check_finite()?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cor::{build_demo_set, DemoLabel};
    use crate::envs::{EnvConfig, PointGoalMiniConfig};
    use crate::seeding::stream_rng;
    use crate::trainer::rollout::{collect_rollouts, EpisodeSpan};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn nets(seed: u64, obs: usize, act: usize) -> (GaussianPolicy, Mlp, Mlp) {
        let mut rng = stream_rng(seed, &[0x5d]);
        let policy = GaussianPolicy::new(obs, act, &[8, 8], -0.5, &mut rng).unwrap();
        let vr = Mlp::orthogonal("value_reward", &[obs, 8, 8, 1], 1.0, 1.0, &mut rng).unwrap();
        let vc = Mlp::orthogonal("value_cost", &[obs, 8, 8, 1], 1.0, 1.0, &mut rng).unwrap();
        (policy, vr, vc)
    }

    /// Small synthetic batch with prescribed advantages and old log-probs at
    /// chosen ratio offsets.
    fn toy_batch(policy: &GaussianPolicy, seed: u64, n: usize, offsets: &[f64]) -> RolloutBatch {
        let mut rng = stream_rng(seed, &[0x70]);
        let mut batch = RolloutBatch::default();
        for i in 0..n {
            let s: Vec<f64> = (0..policy.obs_dim())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let sampled = policy.sample_detailed(&s, &mut rng).unwrap();
            batch.logp_old.push(sampled.log_prob + offsets[i % offsets.len()]);
            batch.means_old.push(sampled.mean);
            batch.stds_old.push(sampled.std);
            batch.states.push(s);
            batch.actions.push(sampled.action);
            batch.raw_rewards.push(rng.random_range(-1.0..1.0));
            batch.raw_costs.push(0.0);
            batch.cors.push(0.0);
            batch.values_r.push(0.0);
            batch.values_c.push(0.0);
            batch.adv_r.push(rng.random_range(-1.0..1.0));
            batch.adv_c.push(rng.random_range(-0.5..0.5));
            batch.ret_r.push(rng.random_range(-1.0..1.0));
            batch.ret_c.push(rng.random_range(0.0..0.5));
        }
        batch.shaped_rewards = batch.raw_rewards.clone();
        batch.shaped_costs = batch.raw_costs.clone();
        batch.episodes.push(EpisodeSpan {
            start: 0,
            len: n,
            truncated: false,
            seed,
        });
        batch
    }

    #[test]
    fn multiplier_zero_reduces_to_plain_surrogate_weights() {
        let (policy, _, _) = nets(1, 4, 2);
        let batch = toy_batch(&policy, 2, 32, &[0.0]);
        let combined = combined_advantages(&batch, 0.0);
        // normalization of the reward channel only, cost channel ignored
        let n = 32.0;
        let mean = batch.adv_r.iter().sum::<f64>() / n;
        let std =
            (batch.adv_r.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
        for (c, a) in combined.iter().zip(&batch.adv_r) {
            assert_eq!(*c, (a - mean) / (std + 1e-8));
        }
    }

    #[test]
    fn zero_advantages_leave_policy_unchanged() {
        let (mut policy, mut vr, mut vc) = nets(3, 4, 2);
        let mut batch = toy_batch(&policy, 4, 16, &[0.0]);
        batch.adv_r = vec![0.0; 16];
        batch.adv_c = vec![0.0; 16];
        let mut before = Vec::new();
        policy.get_flat(&mut before);
        let mut pa = Adam::new(policy.n_params(), 3e-4);
        let mut va = Adam::new(vr.params().len(), 3e-4);
        let mut ca = Adam::new(vc.params().len(), 3e-4);
        ppo_lagrangian_update(
            &batch, &mut policy, &mut pa, &mut vr, &mut va, &mut vc, &mut ca, 0.5, 0.2, 0.001,
            5, None, 0,
        )
        .unwrap();
        let mut after = Vec::new();
        policy.get_flat(&mut after);
        assert_eq!(before, after);
    }

    /// Per-sample kink pattern of the surrogate: the clipped-min branch plus
    /// the ReLU activity of the mean net. Finite-difference probes whose two
    /// evaluations land on different patterns straddle a non-differentiable
    /// point and must be skipped.
    fn clip_branches(
        policy: &GaussianPolicy,
        batch: &RolloutBatch,
        adv: &[f64],
        clip: f64,
    ) -> Vec<(bool, Vec<bool>)> {
        (0..batch.len())
            .map(|i| {
                let logp = policy.log_prob(&batch.states[i], &batch.actions[i]).unwrap();
                let ratio = (logp - batch.logp_old[i]).exp();
                let unclipped = if adv[i] >= 0.0 {
                    ratio <= 1.0 + clip
                } else {
                    ratio >= 1.0 - clip
                };
                let units = policy.mean_net().active_units(&batch.states[i]).unwrap();
                (unclipped, units)
            })
            .collect()
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let h = 1e-6;
        let mut checked = 0usize;
        let mut skipped = 0usize;
        for case in 0..20 {
            let (policy, _, _) = nets(100 + case, 3, 2);
            // offsets put some ratios outside the clip band on both sides
            let batch = toy_batch(&policy, 200 + case, 10, &[0.0, 0.3, -0.3]);
            let adv = combined_advantages(&batch, 0.7);
            let mut grad = vec![0.0; policy.n_params()];
            clipped_surrogate_grad(&policy, &batch, &adv, 0.2, &mut grad).unwrap();

            let mut flat = Vec::new();
            policy.get_flat(&mut flat);
            let mut probe = policy.clone();
            for k in (0..flat.len()).step_by(7) {
                let orig = flat[k];
                flat[k] = orig + h;
                probe.set_flat(&flat).unwrap();
                let up = clipped_surrogate_loss(&probe, &batch, &adv, 0.2).unwrap();
                let branches_up = clip_branches(&probe, &batch, &adv, 0.2);
                flat[k] = orig - h;
                probe.set_flat(&flat).unwrap();
                let dn = clipped_surrogate_loss(&probe, &batch, &adv, 0.2).unwrap();
                let branches_dn = clip_branches(&probe, &batch, &adv, 0.2);
                flat[k] = orig;
                probe.set_flat(&flat).unwrap();
                if branches_up != branches_dn {
                    skipped += 1;
                    continue;
                }
                checked += 1;
                let fd = (up - dn) / (2.0 * h);
                let denom = fd.abs().max(grad[k].abs()).max(1e-6);
                assert!(
                    (fd - grad[k]).abs() / denom < 1e-4,
                    "case {case} param {k}: analytic {} vs fd {fd}",
                    grad[k]
                );
            }
        }
        assert!(
            checked >= 100 && checked > 20 * skipped,
            "too few differentiable probes: {checked} checked, {skipped} skipped"
        );
    }

    #[test]
    fn bc_gradient_matches_finite_differences() {
        let (policy, _, _) = nets(7, 20, 2);
        let env = EnvConfig::PointGoal(PointGoalMiniConfig {
            horizon: 25,
            ..Default::default()
        });
        let (p2, vr, vc) = nets(8, 20, 2);
        let roll = collect_rollouts(&p2, &vr, &vc, &env, None, (0.0, 0.0), 3, 0, 50, 1).unwrap();
        let trajs = crate::trainer::rollout_to_trajectories(&roll).unwrap();
        let demo = build_demo_set(&trajs, DemoLabel::RewardExpert, Some(30), 5).unwrap();

        let mut grad = vec![0.0; policy.n_params()];
        let ll = bc_grad(&policy, &demo, 1.0, &mut grad).unwrap();
        assert_relative_eq!(ll, bc_log_likelihood(&policy, &demo).unwrap());

        let h = 1e-6;
        let mut flat = Vec::new();
        policy.get_flat(&mut flat);
        let mut probe = policy.clone();
        for k in (0..flat.len()).step_by(11) {
            let orig = flat[k];
            flat[k] = orig + h;
            probe.set_flat(&flat).unwrap();
            let up = bc_log_likelihood(&probe, &demo).unwrap();
            flat[k] = orig - h;
            probe.set_flat(&flat).unwrap();
            let dn = bc_log_likelihood(&probe, &demo).unwrap();
            flat[k] = orig;
            probe.set_flat(&flat).unwrap();
            let fd = (up - dn) / (2.0 * h);
            let denom = fd.abs().max(grad[k].abs()).max(1e-6);
            assert!((fd - grad[k]).abs() / denom < 1e-4, "param {k}");
        }
    }

    #[test]
    fn lagrange_constant_violation_grows_linearly() {
        let (policy, _, _) = nets(9, 4, 2);
        let mut batch = toy_batch(&policy, 10, 20, &[0.0]);
        batch.shaped_costs = vec![0.1; 20];
        let gamma = 0.9;
        let c_hat = batch.mean_discounted_shaped_cost(gamma).unwrap();
        let limit = c_hat / 2.0;
        let lr = 0.05;
        let mut state = LagrangeState::default();
        for k in 1..=10 {
            state = lagrange_update(&state, &batch, limit, gamma, lr).unwrap();
            assert_relative_eq!(
                state.multiplier,
                k as f64 * lr * (c_hat - limit),
                max_relative = 1e-12
            );
        }
        // smoothed estimate converges to the constant
        assert_relative_eq!(state.cost_estimate, c_hat, max_relative = 1e-9);
    }

    #[test]
    fn lagrange_at_limit_unchanged_and_projected_at_zero() {
        let (policy, _, _) = nets(11, 4, 2);
        let mut batch = toy_batch(&policy, 12, 20, &[0.0]);
        batch.shaped_costs = vec![0.2; 20];
        let gamma = 0.9;
        let c_hat = batch.mean_discounted_shaped_cost(gamma).unwrap();
        let state = LagrangeState {
            multiplier: 0.7,
            cost_estimate: 0.0,
            initialized: false,
        };
        let next = lagrange_update(&state, &batch, c_hat, gamma, 0.05).unwrap();
        assert_eq!(next.multiplier, 0.7);
        // below the limit from zero: projection keeps it at zero
        let state = LagrangeState::default();
        let next = lagrange_update(&state, &batch, c_hat * 10.0, gamma, 0.05).unwrap();
        assert_eq!(next.multiplier, 0.0);
    }

    #[test]
    fn raising_lambda_c_never_shrinks_the_violation_gap() {
        let (policy, vr, vc) = nets(13, 20, 2);
        let mut rng = stream_rng(14, &[6]);
        let mut rows = |offset: f64| -> Vec<Vec<f64>> {
            (0..25)
                .map(|_| (0..20).map(|_| rng.random_range(-1.0..1.0) + offset).collect())
                .collect()
        };
        let reward_set =
            crate::cor::DemoSet::from_rows(rows(0.0), DemoLabel::RewardExpert).unwrap();
        let safe_set = crate::cor::DemoSet::from_rows(rows(1.5), DemoLabel::SafeExpert).unwrap();
        let engine = crate::cor::CorEngine::new(
            &reward_set,
            &safe_set,
            crate::cor::CorParams::default(),
            None,
            false,
        )
        .unwrap();
        let env = EnvConfig::PointGoal(PointGoalMiniConfig {
            horizon: 40,
            ..Default::default()
        });
        let gamma = 0.99;
        let limit = 0.025 / (1.0 - gamma);
        let mut gaps = Vec::new();
        for lambda_c in [0.0, 0.01, 0.05, 0.2] {
            let batch = collect_rollouts(
                &policy,
                &vr,
                &vc,
                &env,
                Some(&engine),
                (0.1, lambda_c),
                21,
                0,
                80,
                1,
            )
            .unwrap();
            let c_hat = batch.mean_discounted_shaped_cost(gamma).unwrap();
            gaps.push(c_hat - limit);
        }
        for w in gaps.windows(2) {
            assert!(w[1] >= w[0], "gap decreased: {:?}", gaps);
        }
    }

    #[test]
    fn kl_gate_reverts_oversized_steps() {
        let (mut policy, mut vr, mut vc) = nets(15, 4, 2);
        let batch = toy_batch(&policy, 16, 24, &[0.0]);
        let mut before = Vec::new();
        policy.get_flat(&mut before);
        // huge learning rate forces the first trial step past the KL bound
        let mut pa = Adam::new(policy.n_params(), 5.0);
        let mut va = Adam::new(vr.params().len(), 3e-4);
        let mut ca = Adam::new(vc.params().len(), 3e-4);
        let stats = ppo_lagrangian_update(
            &batch, &mut policy, &mut pa, &mut vr, &mut va, &mut vc, &mut ca, 0.0, 0.2, 0.001,
            10, None, 0,
        )
        .unwrap();
        assert_eq!(stats.epochs_accepted, 0);
        assert_eq!(stats.kl, 0.0);
        let mut after = Vec::new();
        policy.get_flat(&mut after);
        assert_eq!(before, after, "rejected trial must be rolled back");
    }

    #[test]
    fn accepted_epochs_respect_the_kl_bound() {
        let (mut policy, mut vr, mut vc) = nets(17, 4, 2);
        let batch = toy_batch(&policy, 18, 48, &[0.0]);
        let mut pa = Adam::new(policy.n_params(), 3e-4);
        let mut va = Adam::new(vr.params().len(), 3e-4);
        let mut ca = Adam::new(vc.params().len(), 3e-4);
        let max_kl = 0.001;
        let stats = ppo_lagrangian_update(
            &batch, &mut policy, &mut pa, &mut vr, &mut va, &mut vc, &mut ca, 0.3, 0.2, max_kl,
            10, None, 0,
        )
        .unwrap();
        assert!(stats.epochs_accepted > 0);
        assert!(stats.kl <= max_kl, "kl {}", stats.kl);
        // re-measure against the stored collection Gaussians
        let mut kl = 0.0;
        for i in 0..batch.len() {
            kl += policy
                .kl_from(&batch.states[i], &batch.means_old[i], &batch.stds_old[i])
                .unwrap();
        }
        kl /= batch.len() as f64;
        assert!(kl <= 2.0 * max_kl, "measured {kl}");
    }

    #[test]
    fn update_is_deterministic() {
        let run = || {
            let (mut policy, mut vr, mut vc) = nets(19, 4, 2);
            let batch = toy_batch(&policy, 20, 32, &[0.0, 0.2]);
            let mut pa = Adam::new(policy.n_params(), 3e-4);
            let mut va = Adam::new(vr.params().len(), 3e-4);
            let mut ca = Adam::new(vc.params().len(), 3e-4);
            ppo_lagrangian_update(
                &batch, &mut policy, &mut pa, &mut vr, &mut va, &mut vc, &mut ca, 0.2, 0.2,
                0.001, 10, None, 0,
            )
            .unwrap();
            let mut flat = Vec::new();
            policy.get_flat(&mut flat);
            (flat, vr.params().to_vec(), vc.params().to_vec())
        };
        assert_eq!(run(), run());
    }
}
