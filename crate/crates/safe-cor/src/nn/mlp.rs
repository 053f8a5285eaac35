//! Fully-connected network with rectified-linear hidden layers, flat
//! parameter storage, and analytic reverse-mode gradients.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Multilayer perceptron. `dims` chains input through hidden layers to the
/// output; parameters are stored flat, layer by layer, each layer as a
/// row-major weight matrix followed by its bias vector. Hidden layers apply
/// ReLU, the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    name: &'static str,
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer input activations recorded during a forward pass, consumed by
/// [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
}

pub fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

impl Mlp {
    pub fn zeros(name: &'static str, dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return Err(Error::Invalid {
                what: "Mlp dims",
                why: format!("need at least two nonzero dims, got {dims:?}"),
            });
        }
        Ok(Mlp {
            name,
            dims: dims.to_vec(),
            params: vec![0.0; param_count(dims)],
        })
    }

    /// Orthogonal initialization: each weight matrix is the Q factor of a
    /// Gaussian sample (sign-fixed so the factorization is unique), scaled by
    /// `gain` for hidden layers and `output_gain` for the final layer. Biases
    /// start at zero.
    pub fn orthogonal<R: Rng>(
        name: &'static str,
        dims: &[usize],
        gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Mlp::zeros(name, dims)?;
        let n_layers = dims.len() - 1;
        for l in 0..n_layers {
            let (rows, cols) = (dims[l + 1], dims[l]);
            let g = if l + 1 == n_layers { output_gain } else { gain };
            let w = orthogonal_matrix(rows, cols, g, rng);
            let (w_off, _) = net.layer_offsets(l);
            for i in 0..rows {
                for j in 0..cols {
                    net.params[w_off + i * cols + j] = w[(i, j)];
                }
            }
        }
        Ok(net)
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimMismatch {
                context: "Mlp::set_params",
                expected: self.params.len(),
                actual: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// (weight offset, bias offset) of layer `l` in the flat parameter vector.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for k in 0..l {
            off += self.dims[k + 1] * (self.dims[k] + 1);
        }
        (off, off + self.dims[l + 1] * self.dims[l])
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache)> {
        if x.len() != self.in_dim() {
            return Err(Error::DimMismatch {
                context: "Mlp::forward input",
                expected: self.in_dim(),
                actual: x.len(),
            });
        }
        let n_layers = self.n_layers();
        let mut acts = Vec::with_capacity(n_layers);
        let mut a = x.to_vec();
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let w = &self.params[off..off + n_out * n_in];
            let b = &self.params[off + n_out * n_in..off + n_out * (n_in + 1)];
            off += n_out * (n_in + 1);
            let mut z = vec![0.0; n_out];
            for i in 0..n_out {
                let row = &w[i * n_in..(i + 1) * n_in];
                let mut acc = b[i];
                for (wi, ai) in row.iter().zip(&a) {
                    acc += wi * ai;
                }
                if !acc.is_finite() {
                    return Err(Error::NonFiniteLayer {
                        network: self.name,
                        layer: l,
                    });
                }
                z[i] = acc;
            }
            if l + 1 < n_layers {
                for v in &mut z {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            acts.push(a);
            a = z;
        }
        Ok((a, MlpCache { acts }))
    }

    /// Accumulates `dL/dparams` into `accum` given `grad_out = dL/doutput`
    /// and the cache of the forward pass that produced that output.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], accum: &mut [f64]) {
        debug_assert_eq!(grad_out.len(), self.out_dim());
        debug_assert_eq!(accum.len(), self.params.len());
        let n_layers = self.n_layers();
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let a = &cache.acts[l];
            for i in 0..n_out {
                let row_off = w_off + i * n_in;
                let d = delta[i];
                for j in 0..n_in {
                    accum[row_off + j] += d * a[j];
                }
                accum[b_off + i] += d;
            }
            if l > 0 {
                let w = &self.params[w_off..w_off + n_out * n_in];
                let mut prev = vec![0.0; n_in];
                for i in 0..n_out {
                    let d = delta[i];
                    let row = &w[i * n_in..(i + 1) * n_in];
                    for (p, wi) in prev.iter_mut().zip(row) {
                        *p += wi * d;
                    }
                }
                // ReLU subgradient: active exactly where the stored input
                // activation of this layer is positive.
                for (p, &ai) in prev.iter_mut().zip(a) {
                    if ai <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Hidden-unit activity pattern (true where the ReLU passes),
    /// concatenated across hidden layers. Probes that straddle a sign flip
    /// sit on a kink of the loss surface, which matters for
    /// finite-difference verification.
    pub fn active_units(&self, x: &[f64]) -> Result<Vec<bool>> {
        let (_, cache) = self.forward_cached(x)?;
        Ok(cache.acts[1..].iter().flatten().map(|&v| v > 0.0).collect())
    }

    /// Scalar-head convenience: forward pass of a `dims = [.., 1]` network.
    pub fn scalar(&self, x: &[f64]) -> Result<f64> {
        debug_assert_eq!(self.out_dim(), 1);
        Ok(self.forward(x)?[0])
    }

    /// Scalar-head gradient: accumulates `coef * dv/dparams` into `accum`
    /// and returns `v`.
    pub fn scalar_grad(&self, x: &[f64], coef: f64, accum: &mut [f64]) -> Result<f64> {
        self.scalar_grad_with(x, |_| coef, accum)
    }

    /// Scalar-head gradient where the coefficient may depend on the
    /// prediction itself (one forward pass for losses like squared error).
    pub fn scalar_grad_with(
        &self,
        x: &[f64],
        coef_of_v: impl FnOnce(f64) -> f64,
        accum: &mut [f64],
    ) -> Result<f64> {
        let (out, cache) = self.forward_cached(x)?;
        self.backward(&cache, &[coef_of_v(out[0])], accum);
        Ok(out[0])
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some((i, &v)) = self.params.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "Mlp parameters",
                index: i,
                value: v,
            });
        }
        Ok(())
    }
}

fn orthogonal_matrix<R: Rng>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> DMatrix<f64> {
    let transpose = rows < cols;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    let a = DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let rm = qr.r();
    for j in 0..c {
        if rm[(j, j)] < 0.0 {
            for i in 0..r {
                q[(i, j)] = -q[(i, j)];
            }
        }
    }
    let m = if transpose { q.transpose() } else { q };
    m * gain
}
