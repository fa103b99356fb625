//! Small fully-connected networks over flat parameter vectors, with exact
//! gradients by backpropagation.
//!
//! Layout of the flat vector: for each layer in order, the weight matrix
//! (`out x in`, row-major) followed by the `out` biases. Hidden layers apply
//! the activation; the last layer is linear and feeds the loss.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{ensure, Error, Result};
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossKind {
    /// Per-sample `0.5 * ||y_hat - y||^2`, averaged over the batch.
    Mse,
    /// Softmax over the output layer followed by cross-entropy.
    SoftmaxCrossEntropy,
}

/// How a trained model is scored on held-out data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MetricKind {
    /// Mean squared error; lower is better.
    Mse,
    /// Classification accuracy; higher is better.
    Accuracy,
}

impl MetricKind {
    pub fn higher_is_better(self) -> bool {
        matches!(self, MetricKind::Accuracy)
    }

    /// True when `a` is at least as good as `b`.
    pub fn at_least_as_good(self, a: f64, b: f64) -> bool {
        if self.higher_is_better() {
            a >= b
        } else {
            a <= b
        }
    }
}

/// Architecture and loss of a small MLP.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    layer_sizes: Vec<usize>,
    activation: Activation,
    loss: LossKind,
}

impl ModelSpec {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, loss: LossKind) -> Result<Self> {
        ensure!(
            layer_sizes.len() >= 2,
            "a model needs at least an input and an output layer"
        );
        ensure!(
            layer_sizes.iter().all(|&s| s > 0),
            "layer sizes must be positive: {:?}",
            layer_sizes
        );
        Ok(ModelSpec {
            layer_sizes,
            activation,
            loss,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn loss(&self) -> LossKind {
        self.loss
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn metric_kind(&self) -> MetricKind {
        match self.loss {
            LossKind::Mse => MetricKind::Mse,
            LossKind::SoftmaxCrossEntropy => MetricKind::Accuracy,
        }
    }

    /// Total number of weights and biases.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let mut out = Vec::with_capacity(self.param_count());
        for w in self.layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
            for _ in 0..fan_in * fan_out {
                out.push(rng.random_range(-limit..limit));
            }
            out.extend(core::iter::repeat_n(0.0, fan_out));
        }
        ParamVector::from_vec(out)
    }

    fn check(&self, params: &ParamVector, batch: &Batch) -> Result<()> {
        ensure!(
            params.len() == self.param_count(),
            "expected {} parameters, got {}",
            self.param_count(),
            params.len()
        );
        ensure!(
            batch.input_dim() == self.input_dim() && batch.target_dim() == self.output_dim(),
            "batch shape {}->{} does not match model {}->{}",
            batch.input_dim(),
            batch.target_dim(),
            self.input_dim(),
            self.output_dim()
        );
        ensure!(!batch.is_empty(), "empty batch");
        Ok(())
    }
}

/// Row-major samples and targets.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Batch {
    input_dim: usize,
    target_dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
}

impl Batch {
    pub fn new(
        inputs: Vec<f64>,
        targets: Vec<f64>,
        input_dim: usize,
        target_dim: usize,
    ) -> Result<Self> {
        ensure!(
            input_dim > 0 && target_dim > 0,
            "batch dimensions must be positive"
        );
        ensure!(
            inputs.len() % input_dim == 0 && targets.len() % target_dim == 0,
            "ragged batch buffers"
        );
        ensure!(
            inputs.len() / input_dim == targets.len() / target_dim,
            "inputs and targets disagree on sample count"
        );
        Ok(Batch {
            input_dim,
            target_dim,
            inputs,
            targets,
        })
    }

    pub fn empty(input_dim: usize, target_dim: usize) -> Self {
        Batch {
            input_dim,
            target_dim,
            inputs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len() / self.input_dim
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn target_dim(&self) -> usize {
        self.target_dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn target(&self, i: usize) -> &[f64] {
        &self.targets[i * self.target_dim..(i + 1) * self.target_dim]
    }

    /// New batch made of the given sample indices, in order.
    pub fn select(&self, indices: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(indices.len() * self.input_dim);
        let mut targets = Vec::with_capacity(indices.len() * self.target_dim);
        for &i in indices {
            inputs.extend_from_slice(self.input(i));
            targets.extend_from_slice(self.target(i));
        }
        Batch {
            input_dim: self.input_dim,
            target_dim: self.target_dim,
            inputs,
            targets,
        }
    }

    /// Concatenation of the given batches in order. All must share a shape.
    pub fn concat<'a, I>(input_dim: usize, target_dim: usize, parts: I) -> Result<Batch>
    where
        I: IntoIterator<Item = &'a Batch>,
    {
        let mut out = Batch::empty(input_dim, target_dim);
        for part in parts {
            ensure!(
                part.input_dim == input_dim && part.target_dim == target_dim,
                "cannot concatenate batches of different shapes"
            );
            out.inputs.extend_from_slice(&part.inputs);
            out.targets.extend_from_slice(&part.targets);
        }
        Ok(out)
    }

    /// Index of the hot entry of each target row.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.len()).map(|i| argmax(self.target(i))).collect()
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Per-sample activations kept for the backward pass.
struct Trace {
    // acts[0] is the input; acts[l + 1] is the output of layer l
    // (post-activation for hidden layers, raw logits for the last one).
    acts: Vec<Vec<f64>>,
}

impl Trace {
    fn new(spec: &ModelSpec) -> Self {
        Trace {
            acts: spec.layer_sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }
}

fn activate(act: Activation, z: f64) -> f64 {
    match act {
        Activation::Tanh => libm::tanh(z),
        Activation::Relu => {
            if z > 0.0 {
                z
            } else {
                0.0
            }
        }
    }
}

/// Derivative of the activation expressed through its output.
fn activation_slope(act: Activation, a: f64) -> f64 {
    match act {
        Activation::Tanh => 1.0 - a * a,
        Activation::Relu => {
            if a > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

fn forward_sample(spec: &ModelSpec, params: &[f64], x: &[f64], trace: &mut Trace) -> Result<()> {
    trace.acts[0].copy_from_slice(x);
    let n_layers = spec.n_layers();
    let mut offset = 0;
    for l in 0..n_layers {
        let (n_in, n_out) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
        let weights = &params[offset..offset + n_in * n_out];
        let biases = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        offset += n_in * n_out + n_out;
        let (lo, hi) = trace.acts.split_at_mut(l + 1);
        let input = &lo[l];
        let output = &mut hi[0];
        let hidden = l + 1 < n_layers;
        for j in 0..n_out {
            let row = &weights[j * n_in..(j + 1) * n_in];
            let mut z = biases[j];
            for (w, a) in row.iter().zip(input.iter()) {
                z += w * a;
            }
            let a = if hidden { activate(spec.activation, z) } else { z };
            if !a.is_finite() {
                return Err(Error::NonFiniteLayer { layer: l });
            }
            output[j] = a;
        }
    }
    Ok(())
}

/// Loss of one sample given the output logits; writes dL/dlogits into `grad`
/// when provided.
fn sample_loss(loss: LossKind, out: &[f64], y: &[f64], grad: Option<&mut [f64]>) -> f64 {
    match loss {
        LossKind::Mse => {
            let mut total = 0.0;
            for (o, t) in out.iter().zip(y) {
                let r = o - t;
                total += r * r;
            }
            if let Some(g) = grad {
                for ((g, o), t) in g.iter_mut().zip(out).zip(y) {
                    *g = o - t;
                }
            }
            0.5 * total
        }
        LossKind::SoftmaxCrossEntropy => {
            let m = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = out.iter().map(|&z| libm::exp(z - m)).sum();
            let lse = m + libm::log(sum_exp);
            let mass: f64 = y.iter().sum();
            let mut total = 0.0;
            for (z, t) in out.iter().zip(y) {
                total += t * (lse - z);
            }
            if let Some(g) = grad {
                for ((g, z), t) in g.iter_mut().zip(out).zip(y) {
                    *g = libm::exp(z - lse) * mass - t;
                }
            }
            total
        }
    }
}

/// Mean loss over the batch.
pub fn forward_loss(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<f64> {
    spec.check(params, batch)?;
    let mut trace = Trace::new(spec);
    let mut total = 0.0;
    for i in 0..batch.len() {
        forward_sample(spec, params.as_slice(), batch.input(i), &mut trace)?;
        total += sample_loss(spec.loss, &trace.acts[spec.n_layers()], batch.target(i), None);
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLayer {
            layer: spec.n_layers(),
        });
    }
    Ok(loss)
}

/// Exact gradient of [`forward_loss`] with respect to the parameters.
pub fn gradient(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    spec.check(params, batch)?;
    let n_layers = spec.n_layers();
    let p = params.as_slice();
    let mut grad = vec![0.0; p.len()];
    let mut trace = Trace::new(spec);
    let mut deltas: Vec<Vec<f64>> = spec.layer_sizes.iter().map(|&s| vec![0.0; s]).collect();

    let mut offsets = Vec::with_capacity(n_layers);
    let mut offset = 0;
    for w in spec.layer_sizes.windows(2) {
        offsets.push(offset);
        offset += w[0] * w[1] + w[1];
    }

    for i in 0..batch.len() {
        forward_sample(spec, p, batch.input(i), &mut trace)?;
        sample_loss(
            spec.loss,
            &trace.acts[n_layers],
            batch.target(i),
            Some(&mut deltas[n_layers]),
        );
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (spec.layer_sizes[l], spec.layer_sizes[l + 1]);
            let base = offsets[l];
            let input = &trace.acts[l];
            let (lo, hi) = deltas.split_at_mut(l + 1);
            let delta = &hi[0];
            let g = &mut grad[base..base + n_in * n_out + n_out];
            for j in 0..n_out {
                let dj = delta[j];
                let row = &mut g[j * n_in..(j + 1) * n_in];
                for (gw, a) in row.iter_mut().zip(input.iter()) {
                    *gw += dj * a;
                }
                g[n_in * n_out + j] += dj;
            }
            if l > 0 {
                let weights = &p[base..base + n_in * n_out];
                let prev = &mut lo[l];
                for (k, slot) in prev.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for j in 0..n_out {
                        s += weights[j * n_in + k] * delta[j];
                    }
                    *slot = s * activation_slope(spec.activation, input[k]);
                }
            }
        }
    }
    let inv_n = batch.len() as f64;
    for g in grad.iter_mut() {
        *g /= inv_n;
        if !g.is_finite() {
            return Err(Error::NonFiniteLayer { layer: n_layers });
        }
    }
    Ok(ParamVector::from_vec(grad))
}

/// Network outputs for one input row (logits for classifiers).
pub fn predict(spec: &ModelSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    ensure!(
        params.len() == spec.param_count() && input.len() == spec.input_dim(),
        "prediction shape mismatch"
    );
    let mut trace = Trace::new(spec);
    forward_sample(spec, params.as_slice(), input, &mut trace)?;
    Ok(trace.acts.pop().unwrap())
}

/// Held-out score: mean squared error for regression, accuracy for
/// classification.
pub fn evaluate_metric(spec: &ModelSpec, params: &ParamVector, batch: &Batch) -> Result<f64> {
    spec.check(params, batch)?;
    let mut trace = Trace::new(spec);
    let mut total = 0.0;
    for i in 0..batch.len() {
        forward_sample(spec, params.as_slice(), batch.input(i), &mut trace)?;
        let out = &trace.acts[spec.n_layers()];
        let y = batch.target(i);
        total += match spec.metric_kind() {
            MetricKind::Mse => out.iter().zip(y).map(|(o, t)| (o - t) * (o - t)).sum::<f64>(),
            MetricKind::Accuracy => (argmax(out) == argmax(y)) as u8 as f64,
        };
    }
    Ok(total / batch.len() as f64)
}
