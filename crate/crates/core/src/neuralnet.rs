//! Small fully connected Q-network with backpropagation and Adam.
//!
//! All parameters live in one flat vector, layer by layer: the row-major
//! weight matrix (`out x in`) followed by the bias vector. Gradients and the
//! Adam moments use the same layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    sizes: Vec<usize>,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

fn layer_offsets(sizes: &[usize]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(sizes.len());
    let mut total = 0;
    for w in sizes.windows(2) {
        offsets.push(total);
        total += w[0] * w[1] + w[1];
    }
    (offsets, total)
}

impl QNetwork {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2 && sizes.iter().all(|&s| s > 0), "invalid layer sizes {sizes:?}");
        let mut net = Self::zeros(sizes);
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let off = net.offsets[l];
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        net
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let (offsets, total) = layer_offsets(sizes);
        QNetwork { sizes: sizes.to_vec(), params: vec![0.0; total], offsets }
    }

    /// Input width, two hidden layers of 32, one output per action.
    pub fn for_actions<R: Rng + ?Sized>(input: usize, actions: usize, rng: &mut R) -> Self {
        Self::new(&[input, 32, 32, actions], rng)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
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

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn weights(&self, l: usize) -> &[f64] {
        let off = self.offsets[l];
        &self.params[off..off + self.sizes[l] * self.sizes[l + 1]]
    }

    fn biases(&self, l: usize) -> &[f64] {
        let off = self.offsets[l] + self.sizes[l] * self.sizes[l + 1];
        &self.params[off..off + self.sizes[l + 1]]
    }

    /// Parameter index ranges of each weight matrix and bias vector, in order.
    pub fn tensor_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        for l in 0..self.layers() {
            let off = self.offsets[l];
            let w = self.sizes[l] * self.sizes[l + 1];
            out.push(off..off + w);
            out.push(off + w..off + w + self.sizes[l + 1]);
        }
        out
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.activations(input).pop().unwrap())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_size() {
            return Err(Error::domain(format!(
                "network expects {} inputs, got {}",
                self.input_size(),
                input.len()
            )));
        }
        Ok(())
    }

    /// Post-activation values of every layer, input first.
    fn activations(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(input.to_vec());
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = self.weights(l);
            let b = self.biases(l);
            let x = &acts[l];
            let last = l + 1 == self.layers();
            let out: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let z = b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    if last { z } else { z.max(0.0) }
                })
                .collect();
            acts.push(out);
        }
        acts
    }

    /// Adds `d loss / d params` for a loss whose only dependence on the output
    /// is `dout` times output `index`.
    fn backprop_single(&self, acts: &[Vec<f64>], index: usize, dout: f64, grad: &mut [f64]) {
        let mut delta = vec![0.0; self.output_size()];
        delta[index] = dout;
        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            let x = &acts[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l == 0 {
                break;
            }
            let w = self.weights(l);
            let mut prev = vec![0.0; n_in];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            // ReLU derivative on the hidden activation feeding layer l.
            for (p, a) in prev.iter_mut().zip(&acts[l]) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Squared error on the taken action's value.
    #[default]
    Mse,
    /// Huber with unit threshold.
    Huber,
}

impl Loss {
    fn value_and_slope(self, err: f64) -> (f64, f64) {
        match self {
            Loss::Mse => (err * err, 2.0 * err),
            Loss::Huber => {
                if err.abs() <= 1.0 {
                    (0.5 * err * err, err)
                } else {
                    (err.abs() - 0.5, err.signum())
                }
            }
        }
    }
}

/// One training sample: input, action index, regression target.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub input: &'a [f64],
    pub action: usize,
    pub target: f64,
}

/// Mean loss over `batch` and its gradient with respect to every parameter.
pub fn loss_and_gradient(net: &QNetwork, batch: &[Sample<'_>], loss: Loss) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::domain("empty training batch"));
    }
    let mut grad = vec![0.0; net.num_params()];
    let mut total = 0.0;
    let scale = 1.0 / batch.len() as f64;
    for s in batch {
        if !s.target.is_finite() {
            return Err(Error::domain(format!("non-finite training target {}", s.target)));
        }
        net.check_input(s.input)?;
        if s.action >= net.output_size() {
            return Err(Error::OutOfRange { what: "action", index: s.action, len: net.output_size() });
        }
        let acts = net.activations(s.input);
        let q = acts.last().unwrap()[s.action];
        let (l, slope) = loss.value_and_slope(q - s.target);
        total += l;
        net.backprop_single(&acts, s.action, slope * scale, &mut grad);
    }
    Ok((total * scale, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(net: &QNetwork, lr: f64) -> Self {
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; net.num_params()], v: vec![0.0; net.num_params()], step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// One Adam step on the batch; returns the loss before the update.
pub fn train_step(net: &mut QNetwork, adam: &mut AdamState, batch: &[Sample<'_>]) -> Result<f64> {
    train_step_with(net, adam, batch, Loss::Mse)
}

pub fn train_step_with(net: &mut QNetwork, adam: &mut AdamState, batch: &[Sample<'_>], loss: Loss) -> Result<f64> {
    let (value, grad) = loss_and_gradient(net, batch, loss)?;
    adam.apply(&mut net.params, &grad);
    Ok(value)
}

/// Deep copy; used to refresh the target network.
pub fn clone_weights(src: &QNetwork) -> QNetwork {
    src.clone()
}

const CHECKPOINT_FORMAT: &str = "risplan-qnetwork";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    layers: Vec<usize>,
    params: Vec<f64>,
}

impl QNetwork {
    /// JSON checkpoint: layer widths plus the flat parameter vector.
    pub fn to_checkpoint(&self) -> String {
        let c = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layers: self.sizes.clone(),
            params: self.params.clone(),
        };
        serde_json::to_string(&c).expect("finite parameters serialize")
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        if c.layers.len() < 2 || c.layers.contains(&0) {
            return Err(Error::Checkpoint(format!("bad layer sizes {:?}", c.layers)));
        }
        let mut net = QNetwork::zeros(&c.layers);
        if c.params.len() != net.num_params() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters for {:?}, found {}",
                net.num_params(),
                c.layers,
                c.params.len()
            )));
        }
        if c.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        net.params = c.params;
        Ok(net)
    }
}
