//! Adaptive-moment optimizer with bias correction.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// Gradient-descent step: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    /// Parameters are checked for finiteness afterwards.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimMismatch {
                context: "Adam::step",
                expected: self.m.len(),
                actual: params.len().max(grad.len()),
            });
        }
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            if !params[i].is_finite() {
                return Err(Error::NonFinite {
                    context: "Adam::step parameter",
                    index: i,
                    value: params[i],
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descends_a_quadratic() {
        let mut params = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.05);
        for _ in 0..2000 {
            let grad: Vec<f64> = params.iter().map(|&p| 2.0 * p).collect();
            opt.step(&mut params, &grad).unwrap();
        }
        assert!(params.iter().all(|p| p.abs() < 1e-3), "params {params:?}");
    }

    #[test]
    fn rejects_non_finite_result() {
        let mut params = vec![0.0];
        let mut opt = Adam::new(1, f64::INFINITY);
        assert!(opt.step(&mut params, &[1.0]).is_err());
    }

    #[test]
    fn first_step_moves_by_lr() {
        // bias-corrected first step has magnitude ~lr regardless of gradient scale
        let mut params = vec![0.0];
        let mut opt = Adam::new(1, 0.01);
        opt.step(&mut params, &[123.4]).unwrap();
        assert!((params[0] + 0.01).abs() < 1e-6, "got {}", params[0]);
    }
}
