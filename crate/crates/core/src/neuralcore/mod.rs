//! Small deterministic neural toolkit: affine layers, an LSTM cell, dropout,
//! softmax cross-entropy, Adam and a finite-difference gradient checker.
//!
//! There is no autodiff. Each composite used by the learners ships a
//! hand-written backward pass, and the test suite checks every one of them
//! against central differences.

mod lstm;
mod matrix;

pub use lstm::{lstm_step, lstm_step_backward, LstmCache, LstmParams};
pub use matrix::{axpy, dot, norm, Matrix};

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seedable random stream; identical seeds give identical streams.
#[derive(Debug, Clone)]
pub struct Rng(ChaCha8Rng);

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Rng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.0.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.0.random::<f64>() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.0);
    }

    /// `amount` distinct indices from `0..length`.
    pub fn sample_indices(&mut self, length: usize, amount: usize) -> Vec<usize> {
        rand::seq::index::sample(&mut self.0, length, amount).into_vec()
    }
}

/// `y = Wx + b`
pub fn affine_apply(w: &Matrix, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if b.len() != w.rows() {
        return Err(Error::Shape(format!(
            "bias of length {} for {} output rows",
            b.len(),
            w.rows()
        )));
    }
    let mut y = w.matvec(x)?;
    axpy(1.0, b, &mut y);
    Ok(y)
}

/// Accumulates `dW += dy ⊗ x`, `db += dy` and returns `dx = Wᵀ dy`.
pub fn affine_backward(w: &Matrix, x: &[f64], dy: &[f64], dw: &mut Matrix, db: &mut [f64]) -> Result<Vec<f64>> {
    if dw.shape() != w.shape() || db.len() != w.rows() || x.len() != w.cols() {
        return Err(Error::Shape("affine gradient buffers do not match layer".into()));
    }
    dw.add_outer(dy, x);
    axpy(1.0, dy, db);
    w.matvec_t(dy)
}

/// Fully connected layer with its own gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        Dense {
            w: Matrix::glorot(outputs, inputs, rng),
            b: vec![0.0; outputs],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Dense {
            w: Matrix::zeros(self.w.rows(), self.w.cols()),
            b: vec![0.0; self.b.len()],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        affine_apply(&self.w, &self.b, x)
    }

    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Dense) -> Result<Vec<f64>> {
        affine_backward(&self.w, x, dy, &mut grads.w, &mut grads.b)
    }
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

/// Inverted dropout. Returns the output and the per-unit scale that was
/// applied, so the backward pass can reuse it.
pub fn dropout_apply(x: &[f64], rate: f64, rng: &mut Rng, training: bool) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.to_vec(), vec![1.0; x.len()]));
    }
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = x.iter().map(|_| if rng.bernoulli(rate) { 0.0 } else { keep }).collect();
    let y = x.iter().zip(&mask).map(|(v, m)| v * m).collect();
    Ok((y, mask))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|x| (x - lse).exp()).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, with its gradient.
pub fn softmax_xent(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let lse = log_sum_exp(logits);
    let loss = lse - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|x| (x - lse).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam step in place.
pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.t += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let c1 = 1.0 - beta1.powi(state.t as i32);
    let c2 = 1.0 - beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
    Ok(())
}

/// Optimiser over a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(sizes: &[usize], config: AdamConfig) -> Self {
        Adam {
            states: sizes.iter().map(|&n| AdamState::new(n, config)).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) -> Result<()> {
        if params.len() != self.states.len() || grads.len() != self.states.len() {
            return Err(Error::Shape("adam: tensor count changed".into()));
        }
        for ((p, g), s) in params.into_iter().zip(grads).zip(&mut self.states) {
            adam_update(p, g, s)?;
        }
        Ok(())
    }
}

/// Largest elementwise relative error between the analytic gradient returned
/// by `f` and central differences with step `eps`.
pub fn grad_check<F>(mut f: F, params: &[f64], eps: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::InvalidArgument(format!(
            "grad_check step {eps} outside (0, 1e-2]"
        )));
    }
    let (loss, analytic) = f(params);
    if !loss.is_finite() {
        return Err(Error::InvalidArgument("loss is not finite".into()));
    }
    if analytic.len() != params.len() {
        return Err(Error::Shape("gradient length differs from parameter count".into()));
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        probe[i] = params[i] + eps;
        let (up, _) = f(&probe);
        probe[i] = params[i] - eps;
        let (down, _) = f(&probe);
        probe[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::InvalidArgument("loss is not finite".into()));
        }
        let numeric = (up - down) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}
