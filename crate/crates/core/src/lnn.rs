//! Liquid time-constant cell.
//!
//! Each step computes an activation `a = tanh(W_in x + W_rec s + b)` and
//! moves the state towards it twice: once through the leak blend
//! `(1 - alpha) s + alpha a` and once through the explicit Euler term
//! `(dt / tau) (a - s)`. The leak rate `alpha` is fixed for a whole window and
//! grows with the window's input volatility. A linear readout of the final
//! state gives the 7-day prediction.
//!
//! Training is plain backpropagation through the unrolled window with an
//! AdamW optimizer and global-norm gradient clipping.

use serde::{Deserialize, Serialize};

use crate::features::WindowDataset;
use crate::rng::SimRng;
use crate::stats;
use crate::{Error, Result};

pub const LEAK_MIN: f64 = 0.05;
pub const LEAK_MAX: f64 = 0.95;

/// Constants of the cell that are not trained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConstants {
    pub alpha_base: f64,
    pub kappa: f64,
    pub tau: f64,
    pub dt: f64,
}

impl Default for CellConstants {
    fn default() -> Self {
        Self {
            alpha_base: 0.5,
            kappa: 0.1,
            tau: 1.0,
            dt: 1.0,
        }
    }
}

impl CellConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.dt > 0.0) {
            return Err(Error::config("tau and dt must be > 0"));
        }
        if !(self.alpha_base > 0.0 && self.alpha_base < 1.0) {
            return Err(Error::config("alpha_base must lie in (0, 1)"));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::config("kappa must be >= 0"));
        }
        Ok(())
    }
}

/// Trainable tensors plus the cell constants. Matrices are row-major with
/// one row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LnnParams {
    pub n_inputs: usize,
    pub n_neurons: usize,
    pub n_outputs: usize,
    pub constants: CellConstants,
    /// `n_neurons x n_inputs`
    pub w_in: Vec<f64>,
    /// `n_neurons x n_neurons`
    pub w_rec: Vec<f64>,
    pub bias: Vec<f64>,
    /// `n_outputs x n_neurons`
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

fn xavier(rng: &mut SimRng, fan_in: usize, fan_out: usize, count: usize) -> Vec<f64> {
    let sd = (2.0 / (fan_in + fan_out) as f64).sqrt();
    (0..count).map(|_| rng.normal(0.0, sd)).collect()
}

/// Xavier-normal weights, zero biases.
pub fn init_xavier(
    n_inputs: usize,
    n_neurons: usize,
    n_outputs: usize,
    constants: CellConstants,
    seed: u64,
) -> Result<LnnParams> {
    if n_inputs == 0 || n_neurons == 0 || n_outputs == 0 {
        return Err(Error::domain("LNN dimensions must be positive"));
    }
    constants.validate()?;
    let mut rng = SimRng::new(seed);
    Ok(LnnParams {
        n_inputs,
        n_neurons,
        n_outputs,
        constants,
        w_in: xavier(&mut rng, n_inputs, n_neurons, n_neurons * n_inputs),
        w_rec: xavier(&mut rng, n_neurons, n_neurons, n_neurons * n_neurons),
        bias: vec![0.0; n_neurons],
        w_out: xavier(&mut rng, n_neurons, n_outputs, n_outputs * n_neurons),
        b_out: vec![0.0; n_outputs],
    })
}

impl LnnParams {
    fn tensors(&self) -> [&Vec<f64>; 5] {
        [&self.w_in, &self.w_rec, &self.bias, &self.w_out, &self.b_out]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [
            &mut self.w_in,
            &mut self.w_rec,
            &mut self.bias,
            &mut self.w_out,
            &mut self.b_out,
        ]
    }

    pub fn zeros_like(&self) -> LnnParams {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Sum of squares over every trainable entry.
    pub fn squared_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }
}

/// `clamp(alpha_base + kappa * volatility, 0.05, 0.95)`
pub fn adaptive_leak(alpha_base: f64, kappa: f64, volatility: f64) -> f64 {
    (alpha_base + kappa * volatility).clamp(LEAK_MIN, LEAK_MAX)
}

/// Mean over input features of each feature's population sd across the window.
pub fn window_volatility(window: &[Vec<f64>]) -> f64 {
    let Some(first) = window.first() else {
        return 0.0;
    };
    let n_features = first.len();
    if n_features == 0 {
        return 0.0;
    }
    let mut column = Vec::with_capacity(window.len());
    let mut total = 0.0;
    for j in 0..n_features {
        column.clear();
        column.extend(window.iter().map(|x| x[j]));
        total += stats::pop_sd(&column);
    }
    total / n_features as f64
}

fn activation_input(params: &LnnParams, state: &[f64], x: &[f64]) -> Vec<f64> {
    let (n, m) = (params.n_neurons, params.n_inputs);
    let mut z = params.bias.clone();
    for (i, zi) in z.iter_mut().enumerate() {
        let row_in = &params.w_in[i * m..(i + 1) * m];
        let row_rec = &params.w_rec[i * n..(i + 1) * n];
        *zi += row_in.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        *zi += row_rec.iter().zip(state).map(|(w, v)| w * v).sum::<f64>();
    }
    z
}

/// The state update `s' = (1 - alpha) s + alpha a + (dt / tau)(a - s)` for a
/// given activation `a`.
pub fn blend(state: &[f64], activation: &[f64], alpha: f64, constants: &CellConstants) -> Vec<f64> {
    let r = constants.dt / constants.tau;
    state
        .iter()
        .zip(activation)
        .map(|(&s, &a)| (1.0 - alpha) * s + alpha * a + r * (-s + a))
        .collect()
}

/// One cell step.
pub fn lnn_step(state: &[f64], x: &[f64], params: &LnnParams, alpha: f64) -> Result<Vec<f64>> {
    if state.len() != params.n_neurons || x.len() != params.n_inputs {
        return Err(Error::domain("state or input dimension mismatch"));
    }
    let a: Vec<f64> = activation_input(params, state, x)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let next = blend(state, &a, alpha, &params.constants);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("LNN state became non-finite".into()));
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// State after each input step, `window_len x n_neurons`.
    pub hidden: Vec<Vec<f64>>,
    pub prediction: Vec<f64>,
    pub alpha: f64,
}

impl ForwardOutput {
    pub fn flattened_hidden(&self) -> Vec<f64> {
        self.hidden.iter().flatten().copied().collect()
    }
}

fn readout(params: &LnnParams, state: &[f64]) -> Vec<f64> {
    let n = params.n_neurons;
    (0..params.n_outputs)
        .map(|k| {
            params.b_out[k]
                + params.w_out[k * n..(k + 1) * n]
                    .iter()
                    .zip(state)
                    .map(|(w, s)| w * s)
                    .sum::<f64>()
        })
        .collect()
}

/// Runs a window from the zero state. `expected_len` guards the window length.
pub fn forward(window: &[Vec<f64>], params: &LnnParams, expected_len: usize) -> Result<ForwardOutput> {
    if window.len() != expected_len {
        return Err(Error::domain(format!(
            "window has {} steps, expected {expected_len}",
            window.len()
        )));
    }
    let c = &params.constants;
    let alpha = adaptive_leak(c.alpha_base, c.kappa, window_volatility(window));
    let mut state = vec![0.0; params.n_neurons];
    let mut hidden = Vec::with_capacity(window.len());
    for x in window {
        state = lnn_step(&state, x, params, alpha)?;
        hidden.push(state.clone());
    }
    let prediction = readout(params, &state);
    Ok(ForwardOutput {
        hidden,
        prediction,
        alpha,
    })
}

/// Accumulates d(loss)/d(params) for one window into `grad`, where the loss
/// contribution is `scale * sum_k (y_k - target_k)^2`. Returns the squared error.
fn backprop_window(
    params: &LnnParams,
    window: &[Vec<f64>],
    target: &[f64],
    scale: f64,
    grad: &mut LnnParams,
) -> f64 {
    let (n, m) = (params.n_neurons, params.n_inputs);
    let c = &params.constants;
    let alpha = adaptive_leak(c.alpha_base, c.kappa, window_volatility(window));
    let mix = alpha + c.dt / c.tau;

    // states[t] is the state before step t; activations[t] the tanh output.
    let mut states = Vec::with_capacity(window.len() + 1);
    let mut activations = Vec::with_capacity(window.len());
    states.push(vec![0.0; n]);
    for x in window {
        let prev = states.last().unwrap();
        let a: Vec<f64> = activation_input(params, prev, x)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let next = blend(prev, &a, alpha, c);
        activations.push(a);
        states.push(next);
    }
    let last = states.last().unwrap();
    let y = readout(params, last);

    let mut sq_err = 0.0;
    let mut ds = vec![0.0; n];
    for k in 0..params.n_outputs {
        let diff = y[k] - target[k];
        sq_err += diff * diff;
        let dy = 2.0 * scale * diff;
        grad.b_out[k] += dy;
        let row = k * n;
        for i in 0..n {
            grad.w_out[row + i] += dy * last[i];
            ds[i] += dy * params.w_out[row + i];
        }
    }

    let mut dz = vec![0.0; n];
    for t in (0..window.len()).rev() {
        let a = &activations[t];
        let prev = &states[t];
        let x = &window[t];
        for i in 0..n {
            dz[i] = mix * ds[i] * (1.0 - a[i] * a[i]);
        }
        let mut ds_prev: Vec<f64> = ds.iter().map(|d| (1.0 - mix) * d).collect();
        for i in 0..n {
            let g = dz[i];
            if g == 0.0 {
                continue;
            }
            grad.bias[i] += g;
            let row_in = i * m;
            for j in 0..m {
                grad.w_in[row_in + j] += g * x[j];
            }
            let row_rec = i * n;
            for j in 0..n {
                grad.w_rec[row_rec + j] += g * prev[j];
                ds_prev[j] += g * params.w_rec[row_rec + j];
            }
        }
        ds = ds_prev;
    }
    sq_err
}

/// Mean squared error over every window and horizon step, and its gradient.
pub fn loss_and_grad(params: &LnnParams, windows: &[&[Vec<f64>]], targets: &[&[f64]]) -> (f64, LnnParams) {
    let mut grad = params.zeros_like();
    let count = (windows.len() * params.n_outputs) as f64;
    let scale = 1.0 / count;
    let mut total = 0.0;
    for (w, t) in windows.iter().zip(targets) {
        total += backprop_window(params, w, t, scale, &mut grad);
    }
    (total / count, grad)
}

/// Mean squared error of the readout prediction over a dataset whose inputs
/// are already plain vectors.
pub fn dataset_mse(params: &LnnParams, windows: &[Vec<Vec<f64>>], targets: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (w, t) in windows.iter().zip(targets) {
        let out = forward(w, params, w.len())?;
        total += out
            .prediction
            .iter()
            .zip(t)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>();
        count += t.len();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 8,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || self.batch_size == 0 {
            return Err(Error::config("learning_rate must be >= 0 and batch_size > 0"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::config("clip_norm must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

struct AdamW {
    m: LnnParams,
    v: LnnParams,
    step: i32,
}

impl AdamW {
    fn new(params: &LnnParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    fn update(&mut self, params: &mut LnnParams, grad: &LnnParams, cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        let lr = cfg.learning_rate;
        let grads = grad.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * p[i]);
            }
        }
    }
}

fn clip_global_norm(grad: &mut LnnParams, max_norm: f64) {
    let norm = grad.squared_norm().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grad.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Trains on `dataset` (features already scaled, targets in model units).
/// Batches are drawn from a seeded shuffle each epoch.
pub fn train(
    dataset: &WindowDataset,
    targets: &[Vec<f64>],
    mut params: LnnParams,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(LnnParams, TrainReport)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Training("empty training dataset".into()));
    }
    if targets.len() != dataset.len() {
        return Err(Error::domain("targets and windows differ in count"));
    }
    let windows: Vec<Vec<Vec<f64>>> = dataset
        .inputs
        .iter()
        .map(|w| w.iter().map(|x| x.to_vec()).collect())
        .collect();
    let mut rng = SimRng::new(seed);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut opt = AdamW::new(&params);
    let mut report = TrainReport::default();

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let ws: Vec<&[Vec<f64>]> = chunk.iter().map(|&i| windows[i].as_slice()).collect();
            let ts: Vec<&[f64]> = chunk.iter().map(|&i| targets[i].as_slice()).collect();
            let (loss, mut grad) = loss_and_grad(&params, &ws, &ts);
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {batches} (lr {}, |params|^2 {:.3e})",
                    cfg.learning_rate,
                    params.squared_norm()
                )));
            }
            clip_global_norm(&mut grad, cfg.clip_norm);
            opt.update(&mut params, &grad, cfg);
            epoch_loss += loss;
            batches += 1;
        }
        report.epoch_losses.push(epoch_loss / batches as f64);
    }
    if !params.is_finite() {
        return Err(Error::Training("parameters became non-finite".into()));
    }
    Ok((params, report))
}
