//! Small analytic problems with closed-form answers.
//!
//! A linear unit with squared loss is quadratic in its parameters, so its
//! Hessian is known exactly and proximal minimizers, implicit derivatives and
//! MAML gradients all have closed forms. Tests and the acceptance suite build
//! on these.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::model::{Activation, Batch, LossKind, ModelSpec};
use crate::rng::rng_for;
use crate::tasks::{ClientPartition, Descriptor, SuiteKind, TaskSuite};

/// Linear `1 -> 1` model.
pub fn linear_unit() -> ModelSpec {
    ModelSpec::new(vec![1, 1], Activation::Tanh, LossKind::Mse).expect("valid spec")
}

/// Linear `input_dim -> 1` model.
pub fn linear_unit_n(input_dim: usize) -> ModelSpec {
    ModelSpec::new(vec![input_dim, 1], Activation::Tanh, LossKind::Mse).expect("valid spec")
}

/// Two samples `(+s, +s c)` and `(-s, -s c)` with `s = sqrt(a)`.
///
/// On the linear unit `(w, b)` the mean loss is
/// `0.5 a (w - c)^2 + 0.5 b^2`: the weight coordinate is the 1-D quadratic
/// `0.5 a (w - c)^2` and the bias decouples with unit curvature.
pub fn decoupled_quadratic(a: f64, c: f64) -> (ModelSpec, Batch) {
    let s = libm::sqrt(a);
    let batch = Batch::new(vec![s, -s], vec![s * c, -s * c], 1, 1).expect("valid batch");
    (linear_unit(), batch)
}

/// A client whose train, eval, support and query sets are all `batch`.
pub fn replicated_client(client_id: usize, batch: &Batch) -> ClientPartition {
    ClientPartition {
        client_id,
        train: batch.clone(),
        eval: batch.clone(),
        support: Some(batch.clone()),
        query: Some(batch.clone()),
        descriptor: Descriptor::Rotation { angle: 0.0 },
    }
}

/// Suite of the given clients with `server` as the only reserved partition
/// (or no server data when `None`).
pub fn suite_of(spec: ModelSpec, clients: Vec<ClientPartition>, server: Option<Batch>) -> TaskSuite {
    let mut suite = TaskSuite::fresh(SuiteKind::SineRegression, spec, clients);
    if let Some(batch) = server {
        let reserved = suite.clients.iter().map(|c| c.client_id).max().unwrap_or(0) + 1;
        suite.server.reserved_ids = vec![reserved];
        suite.server.pooled = batch.clone();
        suite.server.partitions = vec![batch];
    }
    suite
}

/// Noisy linear-regression data on `input_dim` features.
pub fn linear_regression_batch(input_dim: usize, n: usize, seed: u64) -> Batch {
    let mut rng = rng_for(seed, &[0xf1]);
    let w: Vec<f64> = (0..input_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut inputs = Vec::with_capacity(n * input_dim);
    let mut targets = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..input_dim).map(|_| rng.random_range(-1.5..1.5)).collect();
        let y = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.3 + rng.random_range(-0.2..0.2);
        inputs.extend(x);
        targets.push(y);
    }
    Batch::new(inputs, targets, input_dim, 1).expect("valid batch")
}

/// Exact Hessian `mean(z z^T)`, `z = [x; 1]`, of a linear unit's squared loss.
pub fn linear_mse_hessian(batch: &Batch) -> Vec<Vec<f64>> {
    assert_eq!(batch.target_dim(), 1, "single-output linear model only");
    let d = batch.input_dim() + 1;
    let mut h = vec![vec![0.0; d]; d];
    for i in 0..batch.len() {
        let mut z = batch.input(i).to_vec();
        z.push(1.0);
        for r in 0..d {
            for c in 0..d {
                h[r][c] += z[r] * z[c];
            }
        }
    }
    let n = batch.len() as f64;
    h.iter_mut().flatten().for_each(|x| *x /= n);
    h
}

/// Dense matrix-vector product.
pub fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}
