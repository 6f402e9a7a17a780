//! A small fully connected classifier with rectifier hidden layers, a
//! softmax cross-entropy head, and SGD with momentum on a cosine schedule.
//!
//! Parameters live in one flat buffer. Layer `l` occupies a row-major
//! `out x in` weight block followed by its `out` biases, so gradients,
//! momentum buffers and checkpoints are all plain `Vec<f64>` of the same
//! length.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

fn layout(dims: &[usize]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(dims.len().saturating_sub(1));
    let mut n = 0;
    for w in dims.windows(2) {
        offsets.push(n);
        n += w[0] * w[1] + w[1];
    }
    (offsets, n)
}

impl Mlp {
    /// All-zero network with layer widths `dims` (input first, output last).
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::config(format!("invalid layer widths {dims:?}")));
        }
        let (offsets, n) = layout(dims);
        Ok(Self {
            dims: dims.to_vec(),
            offsets,
            params: vec![0.0; n],
        })
    }

    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init_uniform<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        for l in 0..net.num_layers() {
            let bound = 1.0 / (net.dims[l] as f64).sqrt();
            let (start, end) = net.layer_range(l);
            for p in &mut net.params[start..end] {
                *p = rng.random_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        if params.len() != net.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters for {dims:?}, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layer_range(&self, l: usize) -> (usize, usize) {
        let start = self.offsets[l];
        (start, start + self.dims[l] * self.dims[l + 1] + self.dims[l + 1])
    }

    /// Row-major `out x in` weight block of layer `l`.
    pub fn weights(&self, l: usize) -> &[f64] {
        let start = self.offsets[l];
        &self.params[start..start + self.dims[l] * self.dims[l + 1]]
    }

    pub fn weights_mut(&mut self, l: usize) -> &mut [f64] {
        let start = self.offsets[l];
        let n = self.dims[l] * self.dims[l + 1];
        &mut self.params[start..start + n]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (_, end) = self.layer_range(l);
        &self.params[end - self.dims[l + 1]..end]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (_, end) = self.layer_range(l);
        let out = self.dims[l + 1];
        &mut self.params[end - out..end]
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn scratch(&self) -> Scratch {
        Scratch {
            acts: self.dims.iter().map(|&d| vec![0.0; d]).collect(),
            delta: vec![0.0; self.dims.iter().copied().max().unwrap_or(0)],
            delta_prev: vec![0.0; self.dims.iter().copied().max().unwrap_or(0)],
        }
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has {} features, network expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Logits for one input.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = self.scratch();
        Ok(self.forward_with(input, &mut scratch)?.to_vec())
    }

    /// Forward pass that keeps every activation in `scratch`.
    pub fn forward_with<'s>(&self, input: &[f64], scratch: &'s mut Scratch) -> Result<&'s [f64]> {
        self.check_input(input)?;
        scratch.acts[0].copy_from_slice(input);
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (lower, upper) = scratch.acts.split_at_mut(l + 1);
            let x = &lower[l];
            let y = &mut upper[0];
            let w = self.weights(l);
            let b = self.bias(l);
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut s = b[o];
                for (wi, xi) in row.iter().zip(x.iter()) {
                    s += wi * xi;
                }
                y[o] = if l < last { s.max(0.0) } else { s };
            }
        }
        Ok(&scratch.acts[self.num_layers()])
    }

    /// Adds `weight * d CE(softmax(f(input)), target) / d params` into
    /// `grads` and returns `weight * CE`.
    pub fn accumulate_ce(
        &self,
        input: &[f64],
        target: usize,
        weight: f64,
        grads: &mut [f64],
        scratch: &mut Scratch,
    ) -> Result<f64> {
        if target >= self.output_dim() {
            return Err(Error::invalid(format!(
                "target {target} out of range for {} outputs",
                self.output_dim()
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::invalid("gradient buffer has the wrong length"));
        }
        self.forward_with(input, scratch)?;
        let nl = self.num_layers();
        let out = self.output_dim();
        let logits = &scratch.acts[nl];
        let lse = log_sum_exp(logits);
        let loss = lse - logits[target];
        if !loss.is_finite() {
            return Err(Error::NumericalFailure(format!("non-finite loss {loss}")));
        }
        for k in 0..out {
            let p = (logits[k] - lse).exp();
            scratch.delta[k] = weight * (p - if k == target { 1.0 } else { 0.0 });
        }
        for l in (0..nl).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            let (start, _) = self.layer_range(l);
            let x = &scratch.acts[l];
            let delta = &scratch.delta[..n_out];
            {
                let (gw, gb) = grads[start..start + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut gw[o * n_in..(o + 1) * n_in];
                    for (g, xi) in row.iter_mut().zip(x.iter()) {
                        *g += d * xi;
                    }
                    gb[o] += d;
                }
            }
            if l > 0 {
                let w = self.weights(l);
                let prev = &mut scratch.delta_prev[..n_in];
                prev.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
                // rectifier derivative, taken as 0 at 0
                for (p, &a) in prev.iter_mut().zip(x.iter()) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
                std::mem::swap(&mut scratch.delta, &mut scratch.delta_prev);
            }
        }
        Ok(weight * loss)
    }

    /// Weighted cross-entropy over a set of terms, with its gradient.
    pub fn backward(&self, terms: &[LossTerm<'_>]) -> Result<(f64, Vec<f64>)> {
        let mut grads = vec![0.0; self.params.len()];
        let mut scratch = self.scratch();
        let mut loss = 0.0;
        for t in terms {
            loss += self.accumulate_ce(t.input, t.target, t.weight, &mut grads, &mut scratch)?;
        }
        Ok((loss, grads))
    }
}

/// One weighted cross-entropy term: `weight * CE(softmax(f(input)), target)`.
#[derive(Clone, Copy, Debug)]
pub struct LossTerm<'a> {
    pub input: &'a [f64],
    pub target: usize,
    pub weight: f64,
}

/// Reusable activation buffers for one network shape.
#[derive(Clone, Debug)]
pub struct Scratch {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `eta0 * cos(7 k pi / (16 K))`.
pub fn cosine_lr(k: u64, total: u64, eta0: f64) -> Result<f64> {
    if total == 0 {
        return Err(Error::invalid("total steps must be positive"));
    }
    if k > total {
        return Err(Error::invalid(format!("step {k} beyond total {total}")));
    }
    Ok(eta0 * (7.0 * k as f64 * std::f64::consts::PI / (16.0 * total as f64)).cos())
}

/// Momentum SGD state on a cosine schedule. No Nesterov correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub momentum: f64,
    pub velocity: Vec<f64>,
    pub step: u64,
    pub total_steps: u64,
    pub base_lr: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    pub fn new(num_params: usize, momentum: f64, base_lr: f64, total_steps: u64) -> Self {
        Self {
            momentum,
            velocity: vec![0.0; num_params],
            step: 0,
            total_steps,
            base_lr,
            weight_decay: 0.0,
        }
    }

    pub fn current_lr(&self) -> Result<f64> {
        cosine_lr(self.step, self.total_steps, self.base_lr)
    }
}

/// One scheduled step; returns the rate used.
pub fn sgd_step(params: &mut Mlp, grads: &[f64], state: &mut OptimizerState) -> Result<f64> {
    let lr = state.current_lr()?;
    sgd_step_with_lr(params, grads, state, lr)?;
    Ok(lr)
}

/// `b <- m b + g; p <- p - lr b`, with optional L2 decay folded into `g`.
pub fn sgd_step_with_lr(params: &mut Mlp, grads: &[f64], state: &mut OptimizerState, lr: f64) -> Result<()> {
    let n = params.num_params();
    if grads.len() != n || state.velocity.len() != n {
        return Err(Error::invalid(format!(
            "shape mismatch: {n} params, {} grads, {} momentum entries",
            grads.len(),
            state.velocity.len()
        )));
    }
    let m = state.momentum;
    let wd = state.weight_decay;
    for ((p, b), &g) in params.params.iter_mut().zip(&mut state.velocity).zip(grads) {
        let g = g + wd * *p;
        *b = m * *b + g;
        *p -= lr * *b;
    }
    state.step += 1;
    if !params.is_finite() {
        return Err(Error::NumericalFailure(format!(
            "parameters diverged at step {}",
            state.step
        )));
    }
    Ok(())
}
