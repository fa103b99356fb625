//! Client-side local optimization.
//!
//! Every routine here is a pure function of `(partition, theta, config,
//! seed)`. Mini-batch order comes from a per-epoch Fisher-Yates shuffle keyed
//! by the seed and the epoch index.

use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{ensure, Error, Result};
use crate::hvp::hvp_hessian_free;
use crate::model::{gradient, Batch, ModelSpec};
use crate::rng::{rng_for, tag};
use crate::tasks::ClientPartition;
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LossMode {
    /// Task loss plus `lambda/2 * ||phi - theta||^2`.
    CustomL2,
    /// Task loss only.
    Basic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "kind"))]
pub enum LocalOptimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct LocalConfig {
    /// Client step size.
    pub alpha: f64,
    /// Proximal regularization strength.
    pub lambda: f64,
    /// Full passes over the client's training data.
    pub epochs: usize,
    pub batch_size: usize,
    pub loss_mode: LossMode,
    pub optimizer: LocalOptimizer,
    /// Difference step of the Hessian-vector product in FedMeta updates.
    pub hvp_delta: f64,
}

impl Default for LocalConfig {
    fn default() -> Self {
        LocalConfig {
            alpha: 0.05,
            lambda: 1.0,
            epochs: 5,
            batch_size: 10,
            loss_mode: LossMode::CustomL2,
            optimizer: LocalOptimizer::Sgd,
            hvp_delta: 1e-3,
        }
    }
}

impl LocalConfig {
    fn check_basic(&self) -> Result<()> {
        ensure!(
            self.alpha > 0.0 && self.alpha.is_finite(),
            "client step size must be positive, got {}",
            self.alpha
        );
        ensure!(
            self.lambda >= 0.0 && self.lambda.is_finite(),
            "regularization strength must be non-negative, got {}",
            self.lambda
        );
        ensure!(self.epochs >= 1, "at least one local epoch is required");
        ensure!(self.batch_size >= 1, "batch size must be positive");
        Ok(())
    }

    /// Full validation, including the loss-mode coupling.
    pub fn validate(&self) -> Result<()> {
        self.check_basic()?;
        ensure!(
            self.loss_mode == LossMode::Basic || self.lambda > 0.0,
            "custom_l2 loss requires lambda > 0"
        );
        ensure!(self.hvp_delta > 0.0, "hvp_delta must be positive");
        if let LocalOptimizer::Adam { beta1, beta2, eps } = self.optimizer {
            ensure!(
                (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0,
                "invalid Adam parameters"
            );
        }
        Ok(())
    }
}

/// Result of a local procedure.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub params: ParamVector,
    /// Number of mini-batch gradient evaluations performed.
    pub grad_evals: u64,
}

struct Stepper {
    alpha: f64,
    adam: Option<(f64, f64, f64, Vec<f64>, Vec<f64>, i32)>,
}

impl Stepper {
    fn new(cfg: &LocalConfig, d: usize) -> Self {
        let adam = match cfg.optimizer {
            LocalOptimizer::Sgd => None,
            LocalOptimizer::Adam { beta1, beta2, eps } => {
                Some((beta1, beta2, eps, alloc::vec![0.0; d], alloc::vec![0.0; d], 0))
            }
        };
        Stepper {
            alpha: cfg.alpha,
            adam,
        }
    }

    fn step(&mut self, params: &mut ParamVector, grad: &ParamVector) {
        match &mut self.adam {
            None => {
                for (p, g) in params.as_mut_slice().iter_mut().zip(grad.iter()) {
                    *p -= self.alpha * g;
                }
            }
            Some((b1, b2, eps, m, v, t)) => {
                *t += 1;
                let c1 = 1.0 - libm::pow(*b1, *t as f64);
                let c2 = 1.0 - libm::pow(*b2, *t as f64);
                for (i, (p, g)) in params.as_mut_slice().iter_mut().zip(grad.iter()).enumerate() {
                    m[i] = *b1 * m[i] + (1.0 - *b1) * g;
                    v[i] = *b2 * v[i] + (1.0 - *b2) * g * g;
                    *p -= self.alpha * (m[i] / c1) / (libm::sqrt(v[i] / c2) + *eps);
                }
            }
        }
    }
}

fn epoch_order(n: usize, seed: u64, epoch: usize, stream: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, &[tag::EPOCH, epoch as u64, stream]));
    idx
}

fn at_epoch(epoch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFiniteLayer { .. } => Error::NonFiniteEpoch { epoch },
        other => other,
    }
}

/// Mini-batch descent on `data` from `theta`; with `prox = Some(lambda)` the
/// step direction is `grad f(phi) + lambda (phi - theta)`.
fn local_descent(
    data: &Batch,
    spec: &ModelSpec,
    theta: &ParamVector,
    cfg: &LocalConfig,
    prox: Option<f64>,
    rng_seed: u64,
) -> Result<LocalUpdate> {
    cfg.check_basic()?;
    ensure!(!data.is_empty(), "client has no training data");
    let mut phi = theta.clone();
    let mut stepper = Stepper::new(cfg, phi.len());
    let mut grad_evals = 0;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(data.len(), rng_seed, epoch, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(chunk);
            let mut g = gradient(spec, &phi, &batch).map_err(at_epoch(epoch))?;
            grad_evals += 1;
            if let Some(lambda) = prox {
                for ((g, p), t) in g.as_mut_slice().iter_mut().zip(phi.iter()).zip(theta.iter()) {
                    *g += lambda * (p - t);
                }
            }
            stepper.step(&mut phi, &g);
        }
        if !phi.is_finite() {
            return Err(Error::NonFiniteEpoch { epoch });
        }
    }
    Ok(LocalUpdate {
        params: phi,
        grad_evals,
    })
}

/// Local optimization of the proximal objective `f(phi) + lambda/2 ||phi - theta||^2`
/// for `cfg.epochs` epochs, starting from `theta`. `cfg.loss_mode` is not
/// consulted; a zero `lambda` reduces to plain SGD.
pub fn client_update(
    partition: &ClientPartition,
    theta: &ParamVector,
    cfg: &LocalConfig,
    spec: &ModelSpec,
    rng_seed: u64,
) -> Result<LocalUpdate> {
    let prox = (cfg.lambda != 0.0).then_some(cfg.lambda);
    local_descent(&partition.train, spec, theta, cfg, prox, rng_seed)
}

/// Plain mini-batch SGD on the task loss for `cfg.epochs` epochs.
pub fn client_update_basic(
    partition: &ClientPartition,
    theta: &ParamVector,
    cfg: &LocalConfig,
    spec: &ModelSpec,
    rng_seed: u64,
) -> Result<LocalUpdate> {
    train_basic(&partition.train, theta, cfg, spec, rng_seed)
}

/// Plain mini-batch descent on `batch`, `cfg.epochs` passes.
pub fn train_basic(
    batch: &Batch,
    theta: &ParamVector,
    cfg: &LocalConfig,
    spec: &ModelSpec,
    rng_seed: u64,
) -> Result<LocalUpdate> {
    local_descent(batch, spec, theta, cfg, None, rng_seed)
}

/// Dispatches on `cfg.loss_mode`.
pub fn local_update(
    partition: &ClientPartition,
    theta: &ParamVector,
    cfg: &LocalConfig,
    spec: &ModelSpec,
    rng_seed: u64,
) -> Result<LocalUpdate> {
    match cfg.loss_mode {
        LossMode::CustomL2 => client_update(partition, theta, cfg, spec, rng_seed),
        LossMode::Basic => client_update_basic(partition, theta, cfg, spec, rng_seed),
    }
}

fn support_query(partition: &ClientPartition) -> Result<(&Batch, &Batch)> {
    match (&partition.support, &partition.query) {
        (Some(s), Some(q)) if !s.is_empty() && !q.is_empty() => Ok((s, q)),
        _ => Err(Error::config(alloc::format!(
            "client {} has no support/query split",
            partition.client_id
        ))),
    }
}

/// Which local meta-gradient to take.
#[derive(Clone, Copy)]
enum MetaOrder {
    First,
    Second,
}

fn local_meta(
    partition: &ClientPartition,
    theta: &ParamVector,
    cfg: &LocalConfig,
    spec: &ModelSpec,
    beta_local: f64,
    rng_seed: u64,
    order: MetaOrder,
) -> Result<LocalUpdate> {
    ensure!(cfg.alpha >= 0.0, "inner step size must be non-negative");
    ensure!(cfg.epochs >= 1 && cfg.batch_size >= 1, "invalid epochs or batch size");
    ensure!(beta_local >= 0.0, "meta step size must be non-negative");
    let (support, query) = support_query(partition)?;
    let mut params = theta.clone();
    let mut grad_evals = 0;
    for epoch in 0..cfg.epochs {
        let s_order = epoch_order(support.len(), rng_seed, epoch, 1);
        let q_order = epoch_order(query.len(), rng_seed, epoch, 2);
        let q_chunks: Vec<&[usize]> = q_order.chunks(cfg.batch_size).collect();
        for (j, s_chunk) in s_order.chunks(cfg.batch_size).enumerate() {
            let ds = support.select(s_chunk);
            let dq = query.select(q_chunks[j % q_chunks.len()]);
            let g_s = gradient(spec, &params, &ds).map_err(at_epoch(epoch))?;
            let adapted = params.axpy(-cfg.alpha, &g_s)?;
            let g_q = gradient(spec, &adapted, &dq).map_err(at_epoch(epoch))?;
            grad_evals += 2;
            let meta = match order {
                MetaOrder::First => g_q,
                MetaOrder::Second => {
                    let hv = hvp_hessian_free(|p| gradient(spec, p, &ds), &params, &g_q, cfg.hvp_delta)
                        .map_err(at_epoch(epoch))?;
                    grad_evals += 2;
                    g_q.axpy(-cfg.alpha, &hv)?
                }
            };
            params.axpy_assign(-beta_local, &meta)?;
        }
        if !params.is_finite() {
            return Err(Error::NonFiniteEpoch { epoch });
        }
    }
    Ok(LocalUpdate { params, grad_evals })
}

/// First-order Per-FedAvg: for each support mini-batch,
/// `theta' = theta - alpha grad f(theta; D_s)` then
/// `theta <- theta - beta_local grad f(theta'; D_q)`.
pub fn perfedavg_fo_update(
    partition: &ClientPartition,
    theta: &ParamVector,
    cfg: &LocalConfig,
    spec: &ModelSpec,
    beta_local: f64,
    rng_seed: u64,
) -> Result<LocalUpdate> {
    local_meta(partition, theta, cfg, spec, beta_local, rng_seed, MetaOrder::First)
}

/// FedMeta (full MAML): like [`perfedavg_fo_update`] but the meta-gradient is
/// `(I - alpha H_s) grad f(theta'; D_q)`, with the Hessian-vector product on
/// the support batch computed Hessian-free.
pub fn fedmeta_update(
    partition: &ClientPartition,
    theta: &ParamVector,
    cfg: &LocalConfig,
    spec: &ModelSpec,
    beta_local: f64,
    rng_seed: u64,
) -> Result<LocalUpdate> {
    local_meta(partition, theta, cfg, spec, beta_local, rng_seed, MetaOrder::Second)
}
