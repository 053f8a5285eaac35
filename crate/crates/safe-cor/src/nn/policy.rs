//! Diagonal Gaussian policy: an MLP mean head plus a state-independent
//! log-standard-deviation vector.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::nn::mlp::Mlp;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_74;

/// One draw from the policy together with the Gaussian it came from.
#[derive(Debug, Clone)]
pub struct Sampled {
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicy {
    mean_net: Mlp,
    log_std: Vec<f64>,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl GaussianPolicy {
    pub fn new<R: Rng>(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        log_std_init: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(obs_dim);
        dims.extend_from_slice(hidden);
        dims.push(act_dim);
        let mean_net = Mlp::orthogonal("policy_mean", &dims, 1.0, 0.01, rng)?;
        let init = log_std_init.clamp(LOG_STD_MIN, LOG_STD_MAX);
        Ok(GaussianPolicy {
            mean_net,
            log_std: vec![init; act_dim],
            log_std_min: LOG_STD_MIN,
            log_std_max: LOG_STD_MAX,
        })
    }

    pub fn from_parts(mean_net: Mlp, log_std: Vec<f64>, min: f64, max: f64) -> Result<Self> {
        if mean_net.out_dim() != log_std.len() {
            return Err(Error::DimMismatch {
                context: "GaussianPolicy::from_parts",
                expected: mean_net.out_dim(),
                actual: log_std.len(),
            });
        }
        let mut p = GaussianPolicy {
            mean_net,
            log_std,
            log_std_min: min,
            log_std_max: max,
        };
        p.clamp_log_std();
        Ok(p)
    }

    pub fn obs_dim(&self) -> usize {
        self.mean_net.in_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.mean_net.out_dim()
    }

    pub fn mean_net(&self) -> &Mlp {
        &self.mean_net
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn n_params(&self) -> usize {
        self.mean_net.params().len() + self.log_std.len()
    }

    /// Flat layout: mean-network parameters followed by log_std entries.
    pub fn get_flat(&self, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(self.mean_net.params());
        out.extend_from_slice(&self.log_std);
    }

    /// Writes a flat parameter vector back; log_std entries are clamped into
    /// their bounds.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimMismatch {
                context: "GaussianPolicy::set_flat",
                expected: self.n_params(),
                actual: flat.len(),
            });
        }
        let split = self.mean_net.params().len();
        self.mean_net.set_params(&flat[..split])?;
        self.log_std.copy_from_slice(&flat[split..]);
        self.clamp_log_std();
        Ok(())
    }

    pub fn clamp_log_std(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(self.log_std_min, self.log_std_max);
        }
    }

    pub fn forward(&self, s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mean = self.mean_net.forward(s)?;
        let std = self.log_std.iter().map(|v| v.exp()).collect();
        Ok((mean, std))
    }

    pub fn sample<R: Rng>(&self, s: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let sampled = self.sample_detailed(s, rng)?;
        Ok((sampled.action, sampled.log_prob))
    }

    /// Like [`sample`](Self::sample) but also exposes the Gaussian the action
    /// was drawn from; rollouts store it for exact KL bookkeeping.
    pub fn sample_detailed<R: Rng>(&self, s: &[f64], rng: &mut R) -> Result<Sampled> {
        let (mean, std) = self.forward(s)?;
        let mut action = Vec::with_capacity(mean.len());
        for (m, sd) in mean.iter().zip(&std) {
            let eps: f64 = rng.sample(StandardNormal);
            action.push(m + sd * eps);
        }
        let log_prob = log_density(&action, &mean, &self.log_std, &std);
        Ok(Sampled {
            action,
            log_prob,
            mean,
            std,
        })
    }

    pub fn log_prob(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        if a.len() != self.act_dim() {
            return Err(Error::DimMismatch {
                context: "GaussianPolicy::log_prob action",
                expected: self.act_dim(),
                actual: a.len(),
            });
        }
        let (mean, std) = self.forward(s)?;
        Ok(log_density(a, &mean, &self.log_std, &std))
    }

    /// Accumulates `coef * d log pi(a|s) / d params` into `accum` (flat
    /// layout) and returns the log density.
    pub fn log_prob_grad(&self, s: &[f64], a: &[f64], coef: f64, accum: &mut [f64]) -> Result<f64> {
        if a.len() != self.act_dim() {
            return Err(Error::DimMismatch {
                context: "GaussianPolicy::log_prob_grad action",
                expected: self.act_dim(),
                actual: a.len(),
            });
        }
        if accum.len() != self.n_params() {
            return Err(Error::DimMismatch {
                context: "GaussianPolicy::log_prob_grad accum",
                expected: self.n_params(),
                actual: accum.len(),
            });
        }
        let (mean, cache) = self.mean_net.forward_cached(s)?;
        let std: Vec<f64> = self.log_std.iter().map(|v| v.exp()).collect();
        let split = self.mean_net.params().len();
        let mut grad_mean = vec![0.0; mean.len()];
        for k in 0..mean.len() {
            let z = (a[k] - mean[k]) / std[k];
            grad_mean[k] = coef * z / std[k];
            accum[split + k] += coef * (z * z - 1.0);
        }
        self.mean_net.backward(&cache, &grad_mean, &mut accum[..split]);
        Ok(log_density(a, &mean, &self.log_std, &std))
    }

    /// Exact KL(self(.|s) || old(.|s)) for a diagonal Gaussian `old` given by
    /// its mean and std at the same state.
    pub fn kl_from(&self, s: &[f64], old_mean: &[f64], old_std: &[f64]) -> Result<f64> {
        let (mean, std) = self.forward(s)?;
        let mut kl = 0.0;
        for k in 0..mean.len() {
            let (mp, sp) = (mean[k], std[k]);
            let (mq, sq) = (old_mean[k], old_std[k]);
            kl += (sq / sp).ln() + (sp * sp + (mp - mq) * (mp - mq)) / (2.0 * sq * sq) - 0.5;
        }
        Ok(kl)
    }

    pub fn check_finite(&self) -> Result<()> {
        self.mean_net.check_finite()?;
        if let Some((i, &v)) = self.log_std.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "log_std",
                index: i,
                value: v,
            });
        }
        Ok(())
    }
}

fn log_density(a: &[f64], mean: &[f64], log_std: &[f64], std: &[f64]) -> f64 {
    let mut logp = 0.0;
    for k in 0..a.len() {
        let z = (a[k] - mean[k]) / std[k];
        logp -= log_std[k] + HALF_LN_2PI + 0.5 * z * z;
    }
    logp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::stream_rng;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_policy(seed: u64, log_std_init: f64) -> GaussianPolicy {
        let mut rng = stream_rng(seed, &[0xab]);
        let mut p = GaussianPolicy::new(3, 2, &[8, 8], log_std_init, &mut rng).unwrap();
        // replace the tiny output layer with generic weights for gradient coverage
        let mut flat = Vec::new();
        p.get_flat(&mut flat);
        let n_mean = p.mean_net().params().len();
        for v in flat.iter_mut().take(n_mean) {
            *v = rng.random_range(-0.7..0.7);
        }
        p.set_flat(&flat).unwrap();
        p
    }

    #[test]
    fn zero_network_means_zero_and_std_is_exp_log_std() {
        let net = Mlp::zeros("policy_mean", &[3, 4, 2]).unwrap();
        let p = GaussianPolicy::from_parts(net, vec![-1.0, 0.5], LOG_STD_MIN, LOG_STD_MAX).unwrap();
        let (mean, std) = p.forward(&[0.4, -0.2, 1.0]).unwrap();
        assert_eq!(mean, vec![0.0, 0.0]);
        assert_relative_eq!(std[0], (-1.0f64).exp());
        assert_relative_eq!(std[1], 0.5f64.exp());
    }

    #[test]
    fn log_std_init_is_clamped_into_bounds() {
        let mut rng = stream_rng(1, &[1]);
        let p = GaussianPolicy::new(2, 1, &[4], -9.0, &mut rng).unwrap();
        assert_eq!(p.log_std()[0], LOG_STD_MIN);
        let p = GaussianPolicy::new(2, 1, &[4], 7.0, &mut rng).unwrap();
        assert_eq!(p.log_std()[0], LOG_STD_MAX);
    }

    #[test]
    fn density_at_the_mode() {
        let p = random_policy(3, -0.3);
        let s = [0.1, 0.2, -0.5];
        let (mean, _) = p.forward(&s).unwrap();
        let logp = p.log_prob(&s, &mean).unwrap();
        let want: f64 = -p.log_std().iter().sum::<f64>() - (2.0 / 2.0) * (2.0 * std::f64::consts::PI).ln();
        assert_relative_eq!(logp, want, max_relative = 1e-12);
    }

    #[test]
    fn sampling_matches_density_and_statistics() {
        let p = random_policy(5, -0.5);
        let s = [0.3, -0.1, 0.8];
        let (mean, std) = p.forward(&s).unwrap();
        let mut rng = stream_rng(77, &[2]);
        let n = 100_000;
        let mut sum = vec![0.0; 2];
        for _ in 0..n {
            let (a, logp) = p.sample(&s, &mut rng).unwrap();
            assert_relative_eq!(logp, p.log_prob(&s, &a).unwrap(), max_relative = 1e-12);
            for k in 0..2 {
                sum[k] += a[k];
            }
        }
        for k in 0..2 {
            let se = std[k] / (n as f64).sqrt();
            let emp = sum[k] / n as f64;
            assert!(
                (emp - mean[k]).abs() < 3.0 * se,
                "dim {k}: empirical {emp} vs mean {} (se {se})",
                mean[k]
            );
        }
    }

    #[test]
    fn lower_clamped_std_concentrates_samples() {
        // std = exp(-5) ~ 6.7e-3: nearly all mass within a few millis of the
        // mean. |a - mean| <= 1e-2 is a ~1.48 sigma event (~86% of samples);
        // |a - mean| <= 3e-2 is ~4.45 sigma and holds with probability far
        // above 0.999.
        let p = random_policy(9, -5.0);
        let s = [0.0, 0.5, -0.5];
        let (mean, _) = p.forward(&s).unwrap();
        let mut rng = stream_rng(13, &[4]);
        let n = 100_000;
        let mut within_1e2 = 0usize;
        let mut within_3e2 = 0usize;
        for _ in 0..n {
            let (a, _) = p.sample(&s, &mut rng).unwrap();
            let dev = (0..2).map(|k| (a[k] - mean[k]).abs()).fold(0.0, f64::max);
            if dev <= 1e-2 {
                within_1e2 += 1;
            }
            if dev <= 3e-2 {
                within_3e2 += 1;
            }
        }
        // per-dim P(|z| <= 1.4843) = 0.8623; both dims independent: 0.7436
        let frac = within_1e2 as f64 / n as f64;
        let want = 0.8623f64.powi(2);
        let se = (want * (1.0 - want) / n as f64).sqrt();
        assert!(
            (frac - want).abs() < 4.0 * se,
            "fraction within 1e-2: {frac}, expected {want}"
        );
        assert!(within_3e2 as f64 / n as f64 > 0.999);
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let h = 1e-5;
        for case in 0..100 {
            let p = random_policy(1000 + case, -0.4);
            let mut rng = stream_rng(2000 + case, &[5]);
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (mean, _) = p.forward(&s).unwrap();
            let a: Vec<f64> = mean.iter().map(|m| m + rng.random_range(-1.0..1.0)).collect();

            let mut grad = vec![0.0; p.n_params()];
            p.log_prob_grad(&s, &a, 1.0, &mut grad).unwrap();

            let mut flat = Vec::new();
            p.get_flat(&mut flat);
            let mut probe = p.clone();
            for k in 0..flat.len() {
                let orig = flat[k];
                flat[k] = orig + h;
                probe.set_flat(&flat).unwrap();
                let up = probe.log_prob(&s, &a).unwrap();
                flat[k] = orig - h;
                probe.set_flat(&flat).unwrap();
                let dn = probe.log_prob(&s, &a).unwrap();
                flat[k] = orig;
                let fd = (up - dn) / (2.0 * h);
                let denom = fd.abs().max(grad[k].abs()).max(1e-8);
                assert!(
                    (fd - grad[k]).abs() / denom < 1e-4,
                    "case {case} param {k}: analytic {} vs fd {fd}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn log_std_gradient_at_mode_is_minus_one() {
        let p = random_policy(21, -0.8);
        let s = [0.2, -0.6, 0.4];
        let (mean, _) = p.forward(&s).unwrap();
        let mut grad = vec![0.0; p.n_params()];
        p.log_prob_grad(&s, &mean, 1.0, &mut grad).unwrap();
        let split = p.mean_net().params().len();
        for k in 0..2 {
            assert_relative_eq!(grad[split + k], -1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn dead_path_weights_do_not_affect_log_prob() {
        // single hidden unit driven negative by the input
        let mut net = Mlp::zeros("policy_mean", &[1, 1, 1]).unwrap();
        net.set_params(&[1.0, 0.0, 0.5, 0.2]).unwrap(); // w1=1, b1=0, w2=0.5, b2=0.2
        let p = GaussianPolicy::from_parts(net, vec![-0.2], LOG_STD_MIN, LOG_STD_MAX).unwrap();
        let s = [-2.0]; // pre-activation -2 < 0, unit dead
        let a = [0.3];
        let base = p.log_prob(&s, &a).unwrap();

        for idx in [0usize, 2] {
            // doubling the input weight or the outgoing weight of a dead unit
            let mut flat = Vec::new();
            p.get_flat(&mut flat);
            flat[idx] *= 2.0;
            let mut q = p.clone();
            q.set_flat(&flat).unwrap();
            assert_eq!(q.log_prob(&s, &a).unwrap(), base);
        }
        // gradient agrees: zero for both dead-path weights
        let mut grad = vec![0.0; p.n_params()];
        p.log_prob_grad(&s, &a, 1.0, &mut grad).unwrap();
        assert_eq!(grad[0], 0.0);
        assert_eq!(grad[2], 0.0);
    }

    #[test]
    fn kl_zero_against_self_and_positive_otherwise() {
        let p = random_policy(31, -0.5);
        let s = [0.1, 0.1, 0.1];
        let (mean, std) = p.forward(&s).unwrap();
        assert_relative_eq!(p.kl_from(&s, &mean, &std).unwrap(), 0.0, epsilon = 1e-14);
        let shifted: Vec<f64> = mean.iter().map(|m| m + 0.5).collect();
        let kl = p.kl_from(&s, &shifted, &std).unwrap();
        // closed form: sum over dims of (0.5/std)^2 / 2
        let want: f64 = std.iter().map(|sd| 0.25 / (2.0 * sd * sd)).sum();
        assert_relative_eq!(kl, want, max_relative = 1e-12);
        assert!(kl > 0.0);
    }

    #[test]
    fn flat_round_trip_preserves_parameters() {
        let p = random_policy(41, -0.3);
        let mut flat = Vec::new();
        p.get_flat(&mut flat);
        let mut q = random_policy(42, -0.9);
        q.set_flat(&flat).unwrap();
        let mut flat2 = Vec::new();
        q.get_flat(&mut flat2);
        assert_eq!(flat, flat2);
    }
}
