//! Dense Q-network with a dueling head.
//!
//! A ReLU trunk feeds two linear streams: a scalar state value and one
//! advantage per action. Q-values are `value + advantage - mean(advantage)`,
//! so the mean of the Q-values always equals the value stream.
//!
//! Weights are stored `inputs x outputs` so a batch (one observation per row)
//! is propagated with a single matrix product per layer.
//!
//! # Checkpoint format
//!
//! JSON object, version 1:
//!
//! ```text
//! { "format": "pumpsurge-qnet", "version": 1,
//!   "inputs": 23, "actions": 3, "hidden": [48, 32, 12],
//!   "layers": [ { "name": "trunk0", "rows": 23, "cols": 48,
//!                 "weights": [...row-major...], "bias": [...] }, ...,
//!               { "name": "value", ... }, { "name": "advantage", ... } ] }
//! ```
//!
//! Numbers are written with round-trip precision, so loading a checkpoint
//! reproduces every parameter bit for bit.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("expected {expected} inputs, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("loss is not finite ({loss}) at update {update}")]
    NonFiniteLoss { loss: f64, update: u64 },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            weights: Array2::zeros((rows, cols)),
            bias: Array1::zeros(cols),
        }
    }

    /// He-scaled uniform weights, zero bias.
    fn he_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let limit = (6.0 / rows as f64).sqrt();
        Self {
            weights: Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit)),
            bias: Array1::zeros(cols),
        }
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }
}

/// Per-action values with the two streams they were aggregated from.
#[derive(Debug, Clone, PartialEq)]
pub struct QOutput {
    pub q: Vec<f64>,
    pub value: f64,
    pub advantage: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub trunk: Vec<Layer>,
    pub value: Layer,
    pub advantage: Layer,
}

/// Gradients with the same shapes as a [`QNetwork`].
pub type Gradients = QNetwork;

/// One minibatch of transitions, one row per sample.
#[derive(Debug, Clone)]
pub struct TdBatch {
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub terminal: Vec<bool>,
}

struct Trace {
    /// Inputs of every layer: the batch, then each hidden activation.
    activations: Vec<Array2<f64>>,
    value: Array1<f64>,
    advantage: Array2<f64>,
}

fn relu(mut z: Array2<f64>) -> Array2<f64> {
    z.mapv_inplace(|v| v.max(0.0));
    z
}

impl QNetwork {
    /// All-zero parameters.
    pub fn zeros(inputs: usize, hidden: &[usize], actions: usize) -> Self {
        let mut trunk = Vec::with_capacity(hidden.len());
        let mut fan_in = inputs;
        for &h in hidden {
            trunk.push(Layer::zeros(fan_in, h));
            fan_in = h;
        }
        Self {
            trunk,
            value: Layer::zeros(fan_in, 1),
            advantage: Layer::zeros(fan_in, actions),
        }
    }

    pub fn init<R: Rng + ?Sized>(inputs: usize, hidden: &[usize], actions: usize, rng: &mut R) -> Self {
        let mut trunk = Vec::with_capacity(hidden.len());
        let mut fan_in = inputs;
        for &h in hidden {
            trunk.push(Layer::he_uniform(fan_in, h, rng));
            fan_in = h;
        }
        let value = Layer::he_uniform(fan_in, 1, rng);
        let advantage = Layer::he_uniform(fan_in, actions, rng);
        Self { trunk, value, advantage }
    }

    pub fn n_inputs(&self) -> usize {
        self.trunk.first().unwrap_or(&self.value).weights.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.advantage.weights.ncols()
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.trunk.iter().map(|l| l.weights.ncols()).collect()
    }

    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.trunk.iter().chain([&self.value, &self.advantage])
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.trunk.iter_mut().chain([&mut self.value, &mut self.advantage])
    }

    pub fn n_parameters(&self) -> usize {
        self.layers().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check(&self, cols: usize) -> Result<(), NeuralError> {
        if cols != self.n_inputs() {
            return Err(NeuralError::ShapeMismatch {
                expected: self.n_inputs(),
                got: cols,
            });
        }
        Ok(())
    }

    fn trace(&self, x: ArrayView2<f64>) -> Trace {
        let mut activations = Vec::with_capacity(self.trunk.len() + 1);
        activations.push(x.to_owned());
        for layer in &self.trunk {
            let h = relu(layer.apply(&activations.last().expect("input present").view()));
            activations.push(h);
        }
        let last = activations.last().expect("input present").view();
        let value = self.value.apply(&last).column(0).to_owned();
        let advantage = self.advantage.apply(&last);
        Trace {
            activations,
            value,
            advantage,
        }
    }

    fn aggregate(value: &Array1<f64>, advantage: &Array2<f64>) -> Array2<f64> {
        let mean = advantage.mean_axis(Axis(1)).expect("at least one action");
        let mut q = advantage.clone();
        for (mut row, (v, m)) in q.outer_iter_mut().zip(value.iter().zip(mean.iter())) {
            row.mapv_inplace(|a| v + (a - m));
        }
        q
    }

    /// Q-values for a batch, one row per observation.
    pub fn q_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NeuralError> {
        self.check(x.ncols())?;
        let t = self.trace(x);
        Ok(Self::aggregate(&t.value, &t.advantage))
    }

    pub fn forward(&self, observation: &[f64]) -> Result<QOutput, NeuralError> {
        self.check(observation.len())?;
        let x = ArrayView2::from_shape((1, observation.len()), observation).expect("row view");
        let t = self.trace(x);
        let q = Self::aggregate(&t.value, &t.advantage);
        Ok(QOutput {
            q: q.row(0).to_vec(),
            value: t.value[0],
            advantage: t.advantage.row(0).to_vec(),
        })
    }

    /// Mean squared error between `targets` and the Q-value of the taken
    /// actions, with its gradient.
    pub fn loss_gradient(
        &self,
        states: ArrayView2<f64>,
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Gradients), NeuralError> {
        self.check(states.ncols())?;
        let b = states.nrows();
        if b == 0 {
            return Err(NeuralError::EmptyBatch);
        }
        let n_act = self.n_actions();
        let t = self.trace(states);
        let q = Self::aggregate(&t.value, &t.advantage);

        // dL/dq is nonzero only at the taken action.
        let mut loss = 0.0;
        let mut d_value = Array2::zeros((b, 1));
        let mut d_adv = Array2::zeros((b, n_act));
        for i in 0..b {
            let a = actions[i];
            let err = q[[i, a]] - targets[i];
            loss += err * err;
            let g = 2.0 * err / b as f64;
            d_value[[i, 0]] = g;
            for k in 0..n_act {
                d_adv[[i, k]] = if k == a { g - g / n_act as f64 } else { -g / n_act as f64 };
            }
        }
        loss /= b as f64;

        let mut grad = Self::zeros(self.n_inputs(), &self.hidden(), n_act);
        let last = t.activations.last().expect("input present");
        grad.value.weights = last.t().dot(&d_value);
        grad.value.bias = d_value.sum_axis(Axis(0));
        grad.advantage.weights = last.t().dot(&d_adv);
        grad.advantage.bias = d_adv.sum_axis(Axis(0));

        let mut delta = d_value.dot(&self.value.weights.t()) + d_adv.dot(&self.advantage.weights.t());
        for l in (0..self.trunk.len()).rev() {
            let out = &t.activations[l + 1];
            Zip::from(&mut delta).and(out).for_each(|d, &h| {
                if h <= 0.0 {
                    *d = 0.0;
                }
            });
            let input = &t.activations[l];
            grad.trunk[l].weights = input.t().dot(&delta);
            grad.trunk[l].bias = delta.sum_axis(Axis(0));
            if l > 0 {
                delta = delta.dot(&self.trunk[l].weights.t());
            }
        }
        Ok((loss, grad))
    }

    /// `self -= lr * grad`, with the gradient rescaled to at most `clip` in
    /// Euclidean norm when given.
    pub fn apply_gradient(&mut self, grad: &Gradients, lr: f64, clip: Option<f64>) {
        let scale = lr * clip_factor(grad, clip);
        for (p, g) in self.layers_mut().zip(grad.layers()) {
            p.weights.scaled_add(-scale, &g.weights);
            p.bias.scaled_add(-scale, &g.bias);
        }
    }

    /// Flattened parameters in checkpoint order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_parameters());
        for l in self.layers() {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_parameters(), "parameter count");
        let mut i = 0;
        for l in self.layers_mut() {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = flat[i];
                i += 1;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let names = (0..self.trunk.len())
            .map(|i| format!("trunk{i}"))
            .chain(["value".to_string(), "advantage".to_string()]);
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            inputs: self.n_inputs(),
            actions: self.n_actions(),
            hidden: self.hidden(),
            layers: names
                .zip(self.layers())
                .map(|(name, l)| LayerRecord {
                    name,
                    rows: l.weights.nrows(),
                    cols: l.weights.ncols(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, NeuralError> {
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(NeuralError::Checkpoint(format!("unsupported {} v{}", c.format, c.version)));
        }
        let mut net = Self::zeros(c.inputs, &c.hidden, c.actions);
        if c.layers.len() != net.trunk.len() + 2 {
            return Err(NeuralError::Checkpoint("wrong number of layers".into()));
        }
        for (l, r) in net.layers_mut().zip(&c.layers) {
            if (r.rows, r.cols) != l.weights.dim() || r.weights.len() != r.rows * r.cols || r.bias.len() != r.cols {
                return Err(NeuralError::Checkpoint(format!("layer {} has the wrong shape", r.name)));
            }
            l.weights = Array2::from_shape_vec((r.rows, r.cols), r.weights.clone()).expect("checked shape");
            l.bias = Array1::from(r.bias.clone());
        }
        if !net.is_finite() {
            return Err(NeuralError::Checkpoint("non-finite parameter".into()));
        }
        Ok(net)
    }

    pub fn save_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serialises")
    }

    pub fn load_json(text: &str) -> Result<Self, NeuralError> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
        Self::from_checkpoint(&c)
    }
}

pub const CHECKPOINT_FORMAT: &str = "pumpsurge-qnet";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub inputs: usize,
    pub actions: usize,
    pub hidden: Vec<usize>,
    pub layers: Vec<LayerRecord>,
}

/// Bootstrapped targets `r + gamma * max_a' q_target(s', a')`, or `r` at
/// terminal transitions.
pub fn td_targets(target: &QNetwork, batch: &TdBatch, gamma: f64) -> Result<Vec<f64>, NeuralError> {
    let next = target.q_batch(batch.next_states.view())?;
    Ok((0..batch.rewards.len())
        .map(|i| {
            if batch.terminal[i] {
                batch.rewards[i]
            } else {
                let best = next.slice(s![i, ..]).iter().copied().fold(f64::NEG_INFINITY, f64::max);
                batch.rewards[i] + gamma * best
            }
        })
        .collect())
}

/// One SGD step on the squared TD error; returns the loss before the step.
pub fn td_update(
    online: &mut QNetwork,
    target: &QNetwork,
    batch: &TdBatch,
    gamma: f64,
    lr: f64,
    clip: Option<f64>,
) -> Result<f64, NeuralError> {
    if batch.actions.is_empty() {
        return Err(NeuralError::EmptyBatch);
    }
    let y = td_targets(target, batch, gamma)?;
    let (loss, grad) = online.loss_gradient(batch.states.view(), &batch.actions, &y)?;
    if !loss.is_finite() {
        return Err(NeuralError::NonFiniteLoss { loss, update: 0 });
    }
    online.apply_gradient(&grad, lr, clip);
    Ok(loss)
}

/// Euclidean norm of all gradient entries.
pub fn gradient_norm(grad: &Gradients) -> f64 {
    grad.layers()
        .map(|l| l.weights.iter().chain(&l.bias).map(|g| g * g).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

fn clip_factor(grad: &Gradients, clip: Option<f64>) -> f64 {
    match clip {
        Some(c) => {
            let norm = gradient_norm(grad);
            if norm > c {
                c / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    }
}

/// Update rule applied to each gradient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// Plain gradient step, no momentum.
    #[default]
    Sgd,
    /// Adam with beta1 0.9, beta2 0.999, epsilon 1e-8.
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adam" => Ok(Self::Adam),
            other => Err(format!("unknown optimizer `{other}` (expected sgd or adam)")),
        }
    }
}

/// Optimizer state: moment estimates for Adam, nothing for SGD.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub clip: Option<f64>,
    moments: Option<(QNetwork, QNetwork)>,
    steps: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, clip: Option<f64>) -> Self {
        Self { kind, learning_rate, clip, moments: None, steps: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one gradient to `net`.
    pub fn step(&mut self, net: &mut QNetwork, grad: &Gradients) {
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => net.apply_gradient(grad, self.learning_rate, self.clip),
            OptimizerKind::Adam => {
                let scale = clip_factor(grad, self.clip);
                let (m, v) = self.moments.get_or_insert_with(|| {
                    let z = QNetwork::zeros(net.n_inputs(), &net.hidden(), net.n_actions());
                    (z.clone(), z)
                });
                let t = self.steps as i32;
                let lr_t = self.learning_rate * (1.0 - BETA2.powi(t)).sqrt() / (1.0 - BETA1.powi(t));
                let layers = net.layers_mut().zip(grad.layers()).zip(m.layers_mut().zip(v.layers_mut()));
                for ((p, g), (ml, vl)) in layers {
                    let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
                        let g = g * scale;
                        *m = BETA1 * *m + (1.0 - BETA1) * g;
                        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                        *p -= lr_t * *m / (v.sqrt() + ADAM_EPS);
                    };
                    Zip::from(&mut p.weights)
                        .and(&g.weights)
                        .and(&mut ml.weights)
                        .and(&mut vl.weights)
                        .for_each(update);
                    Zip::from(&mut p.bias).and(&g.bias).and(&mut ml.bias).and(&mut vl.bias).for_each(update);
                }
            }
        }
    }
}

/// [`td_update`] with an explicit optimizer.
pub fn td_step(
    online: &mut QNetwork,
    target: &QNetwork,
    batch: &TdBatch,
    gamma: f64,
    optimizer: &mut Optimizer,
) -> Result<f64, NeuralError> {
    if batch.actions.is_empty() {
        return Err(NeuralError::EmptyBatch);
    }
    let y = td_targets(target, batch, gamma)?;
    let (loss, grad) = online.loss_gradient(batch.states.view(), &batch.actions, &y)?;
    if !loss.is_finite() {
        return Err(NeuralError::NonFiniteLoss { loss, update: optimizer.steps });
    }
    optimizer.step(online, &grad);
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    fn small(seed: u64) -> QNetwork {
        QNetwork::init(4, &[5, 3], 3, &mut stream(seed, Purpose::Initialization, 0))
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = QNetwork::zeros(3, &[4], 5);
        let out = net.forward(&[1.0, -2.0, 0.5]).unwrap();
        assert!(out.q.iter().all(|&q| q == 0.0));
    }

    #[test]
    fn mean_q_is_value_stream() {
        let net = small(1);
        let out = net.forward(&[0.3, -0.2, 1.5, 0.7]).unwrap();
        let mean = out.q.iter().sum::<f64>() / out.q.len() as f64;
        assert!((mean - out.value).abs() <= 1e-12);
    }

    #[test]
    fn advantage_bias_shift_is_invisible() {
        let mut net = small(2);
        let x = [0.1, 0.2, 0.3, 0.4];
        let before = net.forward(&x).unwrap().q;
        net.advantage.bias.mapv_inplace(|b| b + 3.25);
        let after = net.forward(&x).unwrap().q;
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(
            small(3).forward(&[1.0]),
            Err(NeuralError::ShapeMismatch { expected: 4, got: 1 })
        ));
    }

    #[test]
    fn terminal_target_arithmetic() {
        let mut net = QNetwork::zeros(2, &[2], 2);
        let target = net.clone();
        let batch = TdBatch {
            states: Array2::from_shape_vec((1, 2), vec![1.0, 1.0]).unwrap(),
            actions: vec![0],
            rewards: vec![1.0],
            next_states: Array2::zeros((1, 2)),
            terminal: vec![true],
        };
        let loss = td_update(&mut net, &target, &batch, 0.9, 1e-6, None).unwrap();
        assert_eq!(loss, 1.0);
    }

    #[test]
    fn fixed_point_leaves_parameters() {
        let mut net = small(4);
        let states = Array2::from_shape_vec((2, 4), vec![0.1, 0.5, -0.3, 0.2, 0.9, 0.1, 0.4, -0.7]).unwrap();
        let q = net.q_batch(states.view()).unwrap();
        let batch = TdBatch {
            states: states.clone(),
            actions: vec![1, 2],
            rewards: vec![q[[0, 1]], q[[1, 2]]],
            next_states: states,
            terminal: vec![true, true],
        };
        let before = net.clone();
        let loss = td_update(&mut net, &before, &batch, 0.99, 0.1, None).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(net, before);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = QNetwork::init(7, &[6, 5], 3, &mut stream(9, Purpose::Initialization, 0));
        let back = QNetwork::load_json(&net.save_json()).unwrap();
        assert_eq!(net.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   back.to_flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        let x = [0.3, 0.1, -0.4, 0.8, 0.2, 0.05, 1.0];
        assert_eq!(net.forward(&x).unwrap(), back.forward(&x).unwrap());
    }

    #[test]
    fn seeded_init_repeats_and_biases_are_zero() {
        assert_eq!(small(5), small(5));
        assert!(small(5).trunk.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn clipping_bounds_step() {
        let net = small(6);
        let states = Array2::from_shape_vec((1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (_, g) = net.loss_gradient(states.view(), &[0], &[100.0]).unwrap();
        let mut a = net.clone();
        a.apply_gradient(&g, 1.0, Some(0.5));
        let step: f64 = a.to_flat().iter().zip(net.to_flat()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!((step - 0.5).abs() < 1e-12);
    }
}
