//! Minimal feed-forward network with backpropagation and Adam, in plain
//! f64. Backs the actor/critic networks and the latency predictor. Small
//! enough that determinism and exact gradient checks matter more than
//! speed; everything is seeded and 64-bit.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Global-norm gradient clip applied by [`Mlp::backward_step`].
pub const GRAD_CLIP_NORM: f64 = 10.0;

/// Per-layer gradients, shaped like the network parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub d_weights: Vec<Vec<f64>>,
    pub d_biases: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(net: &Mlp) -> Self {
        Gradients {
            d_weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            d_biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn global_norm(&self) -> f64 {
        let ss: f64 = self
            .d_weights
            .iter()
            .chain(self.d_biases.iter())
            .flat_map(|v| v.iter())
            .map(|g| g * g)
            .sum();
        ss.sqrt()
    }

    fn scale(&mut self, s: f64) {
        for v in self.d_weights.iter_mut().chain(self.d_biases.iter_mut()) {
            for g in v.iter_mut() {
                *g *= s;
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.d_weights
            .iter()
            .chain(self.d_biases.iter())
            .all(|v| v.iter().all(|g| g.is_finite()))
    }
}

/// Feed-forward network: ReLU on hidden layers, identity output, with
/// Adam optimizer state carried alongside the parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    /// Row-major `out x in` weight matrix per layer.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    adam_m_w: Vec<Vec<f64>>,
    adam_v_w: Vec<Vec<f64>>,
    adam_m_b: Vec<Vec<f64>>,
    adam_v_b: Vec<Vec<f64>>,
    step: u64,
    seed: u64,
}

impl Mlp {
    /// Glorot-uniform initialization, seeded.
    pub fn new(layer_dims: &[usize], seed: u64) -> Self {
        assert!(layer_dims.len() >= 2, "need at least input and output dims");
        let mut rng = crate::rng::stream(seed, "mlp-init");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_dims.len() - 1 {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        let zeros = |shape: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            shape.iter().map(|v| vec![0.0; v.len()]).collect()
        };
        Mlp {
            layer_dims: layer_dims.to_vec(),
            adam_m_w: zeros(&weights),
            adam_v_w: zeros(&weights),
            adam_m_b: zeros(&biases),
            adam_v_b: zeros(&biases),
            weights,
            biases,
            step: 0,
            seed,
        }
    }

    /// All-zero parameters; handy for tests and the untrained predictor.
    pub fn zeros(layer_dims: &[usize]) -> Self {
        let mut net = Mlp::new(layer_dims, 0);
        for w in net.weights.iter_mut() {
            w.iter_mut().for_each(|x| *x = 0.0);
        }
        net
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    fn n_layers(&self) -> usize {
        self.weights.len()
    }

    /// Deterministic forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut a = x.to_vec();
        for l in 0..self.n_layers() {
            a = self.layer_forward(l, &a);
        }
        Ok(a)
    }

    fn layer_forward(&self, l: usize, a: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
        let w = &self.weights[l];
        let last = l == self.n_layers() - 1;
        let mut out = Vec::with_capacity(n_out);
        for j in 0..n_out {
            let row = &w[j * n_in..(j + 1) * n_in];
            let z = self.biases[l][j] + dot(row, a);
            out.push(if last { z } else { z.max(0.0) });
        }
        out
    }

    /// Forward pass keeping every layer's activations (input included).
    fn forward_cached(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        acts.push(x.to_vec());
        for l in 0..self.n_layers() {
            let next = self.layer_forward(l, acts.last().unwrap());
            acts.push(next);
        }
        acts
    }

    /// Accumulated parameter gradients for a batch, given the gradient of
    /// the loss with respect to each sample's output. No scaling is applied
    /// here; the caller owns any 1/N factor.
    pub fn backprop(&self, batch_x: &[Vec<f64>], grad_out: &[Vec<f64>]) -> Result<Gradients> {
        if batch_x.len() != grad_out.len() {
            return Err(Error::DimensionMismatch {
                expected: batch_x.len(),
                got: grad_out.len(),
            });
        }
        let mut grads = Gradients::zeros_like(self);
        for (x, gy) in batch_x.iter().zip(grad_out.iter()) {
            if gy.len() != self.output_dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.output_dim(),
                    got: gy.len(),
                });
            }
            let acts = self.forward_cached(x);
            // delta starts as dL/dy (identity output).
            let mut delta = gy.clone();
            for l in (0..self.n_layers()).rev() {
                let n_in = self.layer_dims[l];
                let a_prev = &acts[l];
                let dw = &mut grads.d_weights[l];
                for (j, dj) in delta.iter().enumerate() {
                    grads.d_biases[l][j] += dj;
                    let row = &mut dw[j * n_in..(j + 1) * n_in];
                    for (slot, ak) in row.iter_mut().zip(a_prev.iter()) {
                        *slot += dj * ak;
                    }
                }
                if l > 0 {
                    // Push delta through W and the ReLU mask of layer l-1.
                    let w = &self.weights[l];
                    let mut prev = vec![0.0; n_in];
                    for (j, dj) in delta.iter().enumerate() {
                        let row = &w[j * n_in..(j + 1) * n_in];
                        for (p, wk) in prev.iter_mut().zip(row.iter()) {
                            *p += dj * wk;
                        }
                    }
                    for (p, a) in prev.iter_mut().zip(acts[l].iter()) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        Ok(grads)
    }

    /// Adam update from raw gradients (no clipping); increments the step
    /// counter.
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for l in 0..self.n_layers() {
            update_slice(
                &mut self.weights[l],
                &grads.d_weights[l],
                &mut self.adam_m_w[l],
                &mut self.adam_v_w[l],
                lr,
                bc1,
                bc2,
            );
            update_slice(
                &mut self.biases[l],
                &grads.d_biases[l],
                &mut self.adam_m_b[l],
                &mut self.adam_v_b[l],
                lr,
                bc1,
                bc2,
            );
        }
    }

    /// Backpropagate `loss_grad` for `batch_x`, clip the global gradient
    /// norm, and apply one Adam step.
    pub fn backward_step(
        &mut self,
        batch_x: &[Vec<f64>],
        loss_grad: &[Vec<f64>],
        lr: f64,
    ) -> Result<()> {
        assert!(lr > 0.0);
        let mut grads = self.backprop(batch_x, loss_grad)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradients"));
        }
        let norm = grads.global_norm();
        if norm > GRAD_CLIP_NORM {
            grads.scale(GRAD_CLIP_NORM / norm);
        }
        self.adam_step(&grads, lr);
        Ok(())
    }

    /// Polyak blend towards `live`: `theta <- (1 - tau) * theta + tau * live`.
    /// Optimizer state is not blended.
    pub fn blend_from(&mut self, live: &Mlp, tau: f64) {
        debug_assert_eq!(self.layer_dims, live.layer_dims);
        for (t, l) in self
            .weights
            .iter_mut()
            .flatten()
            .chain(self.biases.iter_mut().flatten())
            .zip(
                live.weights
                    .iter()
                    .flatten()
                    .chain(live.biases.iter().flatten()),
            )
        {
            *t = (1.0 - tau) * *t + tau * *l;
        }
    }

    pub fn params_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .all(|v| v.iter().all(|p| p.is_finite()))
    }

    /// Flattened copy of all parameters (weights then biases, layer order);
    /// used by finite-difference checks.
    pub fn flat_params(&self) -> Vec<f64> {
        self.weights
            .iter()
            .flatten()
            .chain(self.biases.iter().flatten())
            .copied()
            .collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut it = flat.iter();
        for p in self
            .weights
            .iter_mut()
            .flatten()
            .chain(self.biases.iter_mut().flatten())
        {
            *p = *it.next().expect("parameter count mismatch");
        }
        assert!(it.next().is_none(), "parameter count mismatch");
    }

    /// Serialize to the checkpoint document (bit-exact round trip).
    pub fn to_checkpoint(&self) -> String {
        serde_json::to_string(self).expect("mlp serializes")
    }

    pub fn from_checkpoint(text: &str) -> Result<Mlp> {
        let net: Mlp = serde_json::from_str(text)?;
        if net.layer_dims.len() < 2 {
            return Err(Error::Checkpoint("layer_dims too short".into()));
        }
        Ok(net)
    }
}

/// Dot product with four accumulators; the independent partial sums break
/// the serial FP dependency so the loop pipelines and vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = 4 * c;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + tail
}

#[allow(clippy::too_many_arguments)]
fn update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Adam on a single scalar (the temperature lives in log space).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarAdam {
    m: f64,
    v: f64,
    step: u64,
}

impl Default for ScalarAdam {
    fn default() -> Self {
        ScalarAdam { m: 0.0, v: 0.0, step: 0 }
    }
}

impl ScalarAdam {
    pub fn step(&mut self, param: &mut f64, grad: f64, lr: f64) {
        self.step += 1;
        self.m = ADAM_BETA1 * self.m + (1.0 - ADAM_BETA1) * grad;
        self.v = ADAM_BETA2 * self.v + (1.0 - ADAM_BETA2) * grad * grad;
        let m_hat = self.m / (1.0 - ADAM_BETA1.powi(self.step as i32));
        let v_hat = self.v / (1.0 - ADAM_BETA2.powi(self.step as i32));
        *param -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
}

/// Numerically stable softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    debug_assert!(!logits.is_empty());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
