//! Fully connected Q-network: feature extractor and function approximator as
//! one stack of ReLU layers with a linear head, TD loss with a frozen target
//! network, backpropagation and Adam.

mod format;

pub use format::{load_weights, save_weights, MAGIC, VERSION};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::sim::MetaAction;

/// Dense layer `y = W x + b` with `W` stored row-major as `rows x cols`
/// (`rows` outputs, `cols` inputs).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, weights: vec![T::zero(); rows * cols], bias: vec![T::zero(); rows] }
    }

    /// Uniform on `±sqrt(6 / fan_in)`, i.e. variance `2 / fan_in`; zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = (6.0 / cols as f64).sqrt();
        let weights = (0..rows * cols).map(|_| T::of(rng.random_range(-bound..bound))).collect();
        Self { rows, cols, weights, bias: vec![T::zero(); rows] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Architecture {
    /// Feature extractor (256, 128) followed by approximator (256, 128).
    #[default]
    Cascaded,
    /// A single (256, 128) hidden stack.
    Collapsed,
}

impl Architecture {
    pub fn hidden(self) -> &'static [usize] {
        match self {
            Architecture::Cascaded => &[256, 128, 256, 128],
            Architecture::Collapsed => &[256, 128],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    pub layers: Vec<Dense<T>>,
}

/// Per-layer inputs and pre-activations kept for the backward pass.
struct Trace<T> {
    inputs: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
}

impl<T: Real> Network<T> {
    pub fn he<R: Rng + ?Sized>(input: usize, hidden: &[usize], outputs: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input;
        for &h in hidden.iter().chain(std::iter::once(&outputs)) {
            layers.push(Dense::he_uniform(h, fan_in, rng));
            fan_in = h;
        }
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Dense::zeros(l.rows, l.cols)).collect() }
    }

    pub fn input_width(&self) -> usize {
        self.layers.first().map_or(0, |l| l.cols)
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameter slices in storage order: each layer's weights, then its bias.
    pub fn params(&self) -> impl Iterator<Item = &[T]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.layers.iter_mut().flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    /// Flat parameter `index` in storage order.
    pub fn param_mut(&mut self, mut index: usize) -> &mut T {
        for slice in self.params_mut() {
            if index < slice.len() {
                return &mut slice[index];
            }
            index -= slice.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect();
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| Dense { rows: l.rows, cols: l.cols, weights: conv(&l.weights), bias: conv(&l.bias) })
                .collect(),
        }
    }

    fn check_width(&self, x: &[T], batch: usize) -> Result<()> {
        let w = self.input_width();
        if batch == 0 || x.len() != batch * w {
            return Err(Error::WidthMismatch { expected: batch.max(1) * w, got: x.len() });
        }
        Ok(())
    }

    fn run(&self, x: &[T], batch: usize, mut trace: Option<&mut Trace<T>>) -> Vec<T> {
        let last = self.layers.len().saturating_sub(1);
        let mut a = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z: Vec<T> = Vec::with_capacity(batch * layer.rows);
            for _ in 0..batch {
                z.extend_from_slice(&layer.bias);
            }
            // Z (batch x rows) += A (batch x cols) * W^T (cols x rows)
            T::gemm(
                batch, layer.cols, layer.rows, T::one(),
                &a, layer.cols, 1,
                &layer.weights, 1, layer.cols,
                T::one(), &mut z, layer.rows, 1,
            );
            let out = if i < last { z.iter().map(|&v| v.max(T::zero())).collect() } else { z.clone() };
            if let Some(t) = trace.as_deref_mut() {
                t.inputs.push(std::mem::replace(&mut a, out));
                t.pre.push(z);
            } else {
                a = out;
            }
        }
        a
    }

    /// Q-values for one observation.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        self.forward_batch(x, 1)
    }

    /// Row-major `batch x outputs` Q-values for `batch` stacked observations.
    pub fn forward_batch(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        self.check_width(x, batch)?;
        Ok(self.run(x, batch, None))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Real>(q: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate().skip(1) {
        if v > q[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_action<T: Real>(q: &[T]) -> MetaAction {
    MetaAction::from_code(argmax(q)).expect("network has one output per meta-action")
}

/// Stacked transitions; observations are row-major `len x width`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransitionBatch<T = f32> {
    pub width: usize,
    pub obs: Vec<T>,
    pub actions: Vec<usize>,
    pub rewards: Vec<T>,
    pub next_obs: Vec<T>,
    pub terminal: Vec<bool>,
}

impl<T: Real> TransitionBatch<T> {
    pub fn with_width(width: usize) -> Self {
        Self { width, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn push(&mut self, obs: &[T], action: usize, reward: T, next_obs: &[T], terminal: bool) {
        debug_assert_eq!(obs.len(), self.width);
        debug_assert_eq!(next_obs.len(), self.width);
        self.obs.extend_from_slice(obs);
        self.actions.push(action);
        self.rewards.push(reward);
        self.next_obs.extend_from_slice(next_obs);
        self.terminal.push(terminal);
    }

    pub fn cast<U: Real>(&self) -> TransitionBatch<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.as_f64())).collect();
        TransitionBatch {
            width: self.width,
            obs: conv(&self.obs),
            actions: self.actions.clone(),
            rewards: conv(&self.rewards),
            next_obs: conv(&self.next_obs),
            terminal: self.terminal.clone(),
        }
    }
}

/// Bootstrapped targets `R + γ max_a' Q(s', a'; target)`, or `R` at terminals.
pub fn td_targets<T: Real>(target: &Network<T>, batch: &TransitionBatch<T>, gamma: T) -> Result<Vec<T>> {
    let n = batch.len();
    let q_next = target.forward_batch(&batch.next_obs, n)?;
    let k = target.output_width();
    Ok((0..n)
        .map(|i| {
            if batch.terminal[i] || gamma == T::zero() {
                batch.rewards[i]
            } else {
                let best = q_next[i * k..(i + 1) * k].iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                batch.rewards[i] + gamma * best
            }
        })
        .collect())
}

/// Mean squared TD error of `net` against the frozen `target`.
pub fn td_loss<T: Real>(net: &Network<T>, target: &Network<T>, batch: &TransitionBatch<T>, gamma: T) -> Result<f64> {
    let y = td_targets(target, batch, gamma)?;
    let q = net.forward_batch(&batch.obs, batch.len())?;
    let k = net.output_width();
    let sum: f64 = (0..batch.len())
        .map(|i| {
            let r = q[i * k + batch.actions[i]].as_f64() - y[i].as_f64();
            r * r
        })
        .sum();
    Ok(sum / batch.len() as f64)
}

/// TD loss and its gradient with respect to `net` only; `target` is treated as a constant.
pub fn td_loss_and_grads<T: Real>(
    net: &Network<T>,
    target: &Network<T>,
    batch: &TransitionBatch<T>,
    gamma: T,
) -> Result<(f64, Network<T>)> {
    if batch.is_empty() {
        return Err(Error::Config("empty transition batch".into()));
    }
    if !(gamma >= T::zero() && gamma < T::one()) {
        return Err(Error::Config(format!("discount must lie in [0, 1), got {gamma:?}")));
    }
    let n = batch.len();
    net.check_width(&batch.obs, n)?;
    let y = td_targets(target, batch, gamma)?;
    let mut trace = Trace { inputs: Vec::new(), pre: Vec::new() };
    let q = net.run(&batch.obs, n, Some(&mut trace));
    let k = net.output_width();

    let mut loss = 0.0f64;
    let mut delta = vec![T::zero(); n * k];
    let scale = T::of(2.0 / n as f64);
    for i in 0..n {
        let a = batch.actions[i];
        let r = q[i * k + a] - y[i];
        loss += r.as_f64() * r.as_f64();
        delta[i * k + a] = scale * r;
    }
    loss /= n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite { what: "TD loss", value: loss });
    }

    let mut grads = net.zeros_like();
    for li in (0..net.layers.len()).rev() {
        let layer = &net.layers[li];
        let input = &trace.inputs[li];
        let g = &mut grads.layers[li];
        // dW (rows x cols) = delta^T (rows x n) * input (n x cols)
        T::gemm(
            layer.rows, n, layer.cols, T::one(),
            &delta, 1, layer.rows,
            input, layer.cols, 1,
            T::zero(), &mut g.weights, layer.cols, 1,
        );
        for i in 0..n {
            for (b, &d) in g.bias.iter_mut().zip(&delta[i * layer.rows..(i + 1) * layer.rows]) {
                *b = *b + d;
            }
        }
        if li == 0 {
            break;
        }
        // dA (n x cols) = delta (n x rows) * W (rows x cols), gated by the ReLU below
        let mut prev = vec![T::zero(); n * layer.cols];
        T::gemm(
            n, layer.rows, layer.cols, T::one(),
            &delta, layer.rows, 1,
            &layer.weights, layer.cols, 1,
            T::zero(), &mut prev, layer.cols, 1,
        );
        for (d, &z) in prev.iter_mut().zip(&trace.pre[li - 1]) {
            if z <= T::zero() {
                *d = T::zero();
            }
        }
        delta = prev;
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 5e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    pub m: Network<T>,
    pub v: Network<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(net: &Network<T>, config: AdamConfig) -> Self {
        Self { config, m: net.zeros_like(), v: net.zeros_like(), step: 0 }
    }
}

/// One bias-corrected Adam descent step.
pub fn adam_step<T: Real>(net: &mut Network<T>, grads: &Network<T>, st: &mut AdamState<T>) {
    st.step += 1;
    let c = st.config;
    let t = st.step as i32;
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let corr1 = T::of(1.0 - c.beta1.powi(t));
    let corr2 = T::of(1.0 - c.beta2.powi(t));
    let (lr, eps) = (T::of(c.learning_rate), T::of(c.epsilon));
    let slices = net.params_mut().zip(grads.params()).zip(st.m.params_mut().zip(st.v.params_mut()));
    for ((w, g), (m, v)) in slices {
        for i in 0..w.len() {
            m[i] = b1 * m[i] + one_b1 * g[i];
            v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
            let m_hat = m[i] / corr1;
            let v_hat = v[i] / corr2;
            w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Largest relative error between `grads` and central differences of the TD
/// loss at `probes` randomly chosen parameters.
pub fn compare_gradients<T: Real, R: Rng + ?Sized>(
    net: &Network<T>,
    target: &Network<T>,
    batch: &TransitionBatch<T>,
    gamma: T,
    grads: &Network<T>,
    probes: usize,
    step: f64,
    rng: &mut R,
) -> Result<f64> {
    let total = net.param_count();
    let flat: Vec<T> = grads.params().flat_map(|s| s.iter().copied()).collect();
    let mut probe_net = net.clone();
    let mut worst = 0.0f64;
    for _ in 0..probes {
        let idx = rng.random_range(0..total);
        let orig = *probe_net.param_mut(idx);
        *probe_net.param_mut(idx) = orig + T::of(step);
        let up = td_loss(&probe_net, target, batch, gamma)?;
        *probe_net.param_mut(idx) = orig - T::of(step);
        let down = td_loss(&probe_net, target, batch, gamma)?;
        *probe_net.param_mut(idx) = orig;
        let numeric = (up - down) / (2.0 * step);
        let analytic = flat[idx].as_f64();
        let denom = numeric.abs().max(analytic.abs()).max(1e-8);
        worst = worst.max((numeric - analytic).abs() / denom);
    }
    Ok(worst)
}

/// Gradient verification of [`td_loss_and_grads`] with step `1e-4`.
pub fn finite_diff_check<T: Real, R: Rng + ?Sized>(
    net: &Network<T>,
    target: &Network<T>,
    batch: &TransitionBatch<T>,
    gamma: T,
    probes: usize,
    rng: &mut R,
) -> Result<f64> {
    let (_, grads) = td_loss_and_grads(net, target, batch, gamma)?;
    compare_gradients(net, target, batch, gamma, &grads, probes.max(1), 1e-4, rng)
}
