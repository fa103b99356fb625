//! Server side: client sampling, meta-gradient estimation from
//! `(theta_prev, phi_i, server data)`, the per-client meta-update and
//! aggregation, plus the baseline strategies.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;

use crate::client::{fedmeta_update, local_update, perfedavg_fo_update, LocalConfig, LocalUpdate, LossMode};
use crate::error::{ensure, Error, Result};
use crate::exec::Executor;
use crate::hvp::hvp_hessian_free;
use crate::model::{gradient, Batch, ModelSpec};
use crate::rng::{derive_seed, rng_for, tag};
use crate::tasks::{ClientPartition, TaskSuite};
use crate::vector::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum StrategyKind {
    FedAvg,
    FedProx,
    FedReptile,
    PerFedAvgFo,
    FedMeta,
    PfedmeMode,
    FedSim,
    FedSimVar1,
    FedSimVar2,
    FedSimVar3,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 10] = [
        StrategyKind::FedAvg,
        StrategyKind::FedProx,
        StrategyKind::FedReptile,
        StrategyKind::PerFedAvgFo,
        StrategyKind::FedMeta,
        StrategyKind::PfedmeMode,
        StrategyKind::FedSim,
        StrategyKind::FedSimVar1,
        StrategyKind::FedSimVar2,
        StrategyKind::FedSimVar3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::FedAvg => "fed_avg",
            StrategyKind::FedProx => "fed_prox",
            StrategyKind::FedReptile => "fed_reptile",
            StrategyKind::PerFedAvgFo => "per_fed_avg_fo",
            StrategyKind::FedMeta => "fed_meta",
            StrategyKind::PfedmeMode => "pfedme_mode",
            StrategyKind::FedSim => "fed_sim",
            StrategyKind::FedSimVar1 => "fed_sim_var1",
            StrategyKind::FedSimVar2 => "fed_sim_var2",
            StrategyKind::FedSimVar3 => "fed_sim_var3",
        }
    }

    /// Strategies driven by [`fedsim_round`].
    pub fn is_server_meta(self) -> bool {
        matches!(
            self,
            StrategyKind::FedSim
                | StrategyKind::FedSimVar1
                | StrategyKind::FedSimVar2
                | StrategyKind::FedSimVar3
                | StrategyKind::PfedmeMode
        )
    }

    /// Strategies whose clients need support/query splits.
    pub fn needs_support_query(self) -> bool {
        matches!(self, StrategyKind::PerFedAvgFo | StrategyKind::FedMeta)
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: alloc::string::String = s.chars().filter(|c| *c != '_' && *c != '-').collect();
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name().replace('_', "").eq_ignore_ascii_case(&norm))
            .ok_or_else(|| Error::config(alloc::format!("unknown strategy `{s}`")))
    }
}

/// Source of the first-order term `v_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FoMode {
    /// `v_i = theta_prev - phi_i`.
    WeightDiff,
    /// `v_i = grad f(phi_i; D_s^q)` on a server query batch.
    ServerData,
}

/// Source of the second-order term `d_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SoMode {
    /// Hessian-free product on a server batch.
    ServerData,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Schedule {
    Constant,
    LinearDecay,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ServerConfig {
    pub strategy: StrategyKind,
    /// Server step size.
    pub beta: f64,
    /// Finite-difference step of the Hessian-vector product.
    pub delta_fd: f64,
    /// Weight of `d_i` in `v_i - delta_weight * d_i`.
    pub delta_weight: f64,
    /// Clients sampled per round.
    pub m: usize,
    pub fo_mode: FoMode,
    pub so_mode: SoMode,
    pub server_batch_size: usize,
    pub schedule: Schedule,
    /// pFedMe-mode mixing rate: `theta_t = (1 - r) theta_prev + r mean(phi)`.
    pub pfedme_mixing: f64,
    /// Meta step of the Per-FedAvg/FedMeta clients; defaults to the
    /// (scheduled) server step size.
    pub beta_local: Option<f64>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            strategy: StrategyKind::FedSim,
            beta: 0.25,
            delta_fd: 0.25,
            delta_weight: 0.25,
            m: 10,
            fo_mode: FoMode::WeightDiff,
            so_mode: SoMode::ServerData,
            server_batch_size: 64,
            schedule: Schedule::LinearDecay,
            pfedme_mixing: 1.0,
            beta_local: None,
        }
    }
}

/// Settings after applying the strategy's forced axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EffectiveModes {
    pub loss_mode: LossMode,
    /// `None` when no server meta-gradient is formed.
    pub fo_mode: Option<FoMode>,
    pub so_mode: SoMode,
}

impl ServerConfig {
    pub fn validate(&self, n_clients: usize) -> Result<()> {
        ensure!(
            self.beta >= 0.0 && self.beta.is_finite(),
            "server step size must be non-negative, got {}",
            self.beta
        );
        ensure!(
            self.m >= 1 && self.m <= n_clients,
            "clients per round must lie in 1..={n_clients}, got {}",
            self.m
        );
        ensure!(self.delta_weight.is_finite(), "delta_weight must be finite");
        ensure!(self.server_batch_size >= 1, "server batch size must be positive");
        ensure!(
            (0.0..=1.0).contains(&self.pfedme_mixing),
            "pfedme mixing rate must lie in [0, 1]"
        );
        if let Some(b) = self.beta_local {
            ensure!(b >= 0.0 && b.is_finite(), "beta_local must be non-negative");
        }
        if self.effective_modes(LossMode::CustomL2).so_mode == SoMode::ServerData {
            ensure!(
                self.delta_fd > 0.0 && self.delta_fd.is_finite(),
                "delta_fd must be positive when second-order terms are on"
            );
        }
        Ok(())
    }

    /// Loss mode and meta-gradient sources the strategy actually uses.
    /// `configured` is the local config's loss mode.
    pub fn effective_modes(&self, configured: LossMode) -> EffectiveModes {
        let (loss_mode, fo_mode, so_mode) = match self.strategy {
            StrategyKind::FedSim => (configured, Some(self.fo_mode), self.so_mode),
            StrategyKind::FedSimVar1 => (LossMode::Basic, Some(self.fo_mode), self.so_mode),
            StrategyKind::FedSimVar2 => (configured, Some(FoMode::ServerData), self.so_mode),
            StrategyKind::FedSimVar3 => (configured, Some(self.fo_mode), SoMode::Off),
            StrategyKind::PfedmeMode | StrategyKind::FedProx => (LossMode::CustomL2, None, SoMode::Off),
            StrategyKind::FedAvg | StrategyKind::FedReptile => (LossMode::Basic, None, SoMode::Off),
            StrategyKind::PerFedAvgFo | StrategyKind::FedMeta => (configured, None, SoMode::Off),
        };
        EffectiveModes {
            loss_mode,
            fo_mode,
            so_mode,
        }
    }

    /// Whether the strategy reads server data at all.
    pub fn needs_server_data(&self) -> bool {
        let modes = self.effective_modes(LossMode::CustomL2);
        modes.so_mode == SoMode::ServerData || modes.fo_mode == Some(FoMode::ServerData)
    }
}

/// Server step size at `round_index` of `total_rounds`.
pub fn schedule_step(beta0: f64, round_index: usize, total_rounds: usize, schedule: Schedule) -> f64 {
    match schedule {
        Schedule::Constant => beta0,
        Schedule::LinearDecay => {
            let total = total_rounds.max(1) as f64;
            (beta0 * (1.0 - round_index as f64 / total)).max(0.0)
        }
    }
}

/// The pieces of one client's meta-gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGradientParts {
    pub v: ParamVector,
    pub d: Option<ParamVector>,
    pub meta_grad: ParamVector,
    pub grad_evals_server: u64,
}

/// Weight-difference estimate `theta - phi` of the first-order term.
pub fn first_order_estimate(theta: &ParamVector, phi: &ParamVector) -> Result<ParamVector> {
    theta.sub(phi)
}

/// First-order term from a server query batch: `grad f(phi; D_s^q)`.
pub fn first_order_from_server_data(spec: &ModelSpec, phi: &ParamVector, server_query: &Batch) -> Result<ParamVector> {
    ensure!(!server_query.is_empty(), "first-order server estimate needs server data");
    gradient(spec, phi, server_query)
}

/// Hessian-free `H(phi) v` on the server batch; two gradient evaluations.
pub fn second_order_estimate(
    spec: &ModelSpec,
    phi: &ParamVector,
    v: &ParamVector,
    server_batch: &Batch,
    delta_fd: f64,
) -> Result<ParamVector> {
    ensure!(
        !server_batch.is_empty(),
        "second-order estimate needs server data; use so_mode = off instead"
    );
    hvp_hessian_free(|p| gradient(spec, p, server_batch), phi, v, delta_fd)
}

/// Server data drawn once per round and shared by every sampled client.
#[derive(Debug, Clone, Default)]
pub struct ServerBatches {
    pub hessian: Option<Batch>,
    pub query: Option<Batch>,
}

/// The server's per-client computation. Reads only the previous global
/// model, the returned personalized model and server data.
pub fn meta_gradient(
    spec: &ModelSpec,
    theta_prev: &ParamVector,
    phi: &ParamVector,
    server: &ServerBatches,
    fo_mode: FoMode,
    so_mode: SoMode,
    scfg: &ServerConfig,
) -> Result<MetaGradientParts> {
    let mut evals = 0;
    let v = match fo_mode {
        FoMode::WeightDiff => first_order_estimate(theta_prev, phi)?,
        FoMode::ServerData => {
            let query = server
                .query
                .as_ref()
                .ok_or_else(|| Error::config("no server query batch this round"))?;
            evals += 1;
            first_order_from_server_data(spec, phi, query)?
        }
    };
    let d = match so_mode {
        SoMode::Off => None,
        SoMode::ServerData => {
            let batch = server
                .hessian
                .as_ref()
                .ok_or_else(|| Error::config("no server batch this round"))?;
            evals += 2;
            Some(second_order_estimate(spec, phi, &v, batch, scfg.delta_fd)?)
        }
    };
    let meta_grad = match &d {
        Some(d) => v.zip_with(d, |v, d| v - scfg.delta_weight * d)?,
        None => v.clone(),
    };
    Ok(MetaGradientParts {
        v,
        d,
        meta_grad,
        grad_evals_server: evals,
    })
}

/// Where a round sits in the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundContext {
    pub round: usize,
    pub total_rounds: usize,
    pub seed: u64,
}

impl RoundContext {
    pub fn client_seed(&self, client_id: usize) -> u64 {
        derive_seed(self.seed, &[tag::CLIENT_UPDATE, self.round as u64, client_id as u64])
    }
}

/// What a round produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub theta: ParamVector,
    /// Sampled client ids in ascending order.
    pub sampled: Vec<usize>,
    pub client_grad_evals: u64,
    pub server_grad_evals: u64,
    /// Number of server mini-batches drawn this round.
    pub server_batch_draws: u32,
    pub beta_used: f64,
}

/// Uniform sample of `m` client positions without replacement, returned as
/// ascending client ids.
pub fn sample_clients(suite: &TaskSuite, m: usize, seed: u64, round: usize) -> Result<Vec<usize>> {
    let n = suite.clients.len();
    ensure!(m >= 1 && m <= n, "cannot sample {m} of {n} clients");
    let mut positions: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, &[tag::CLIENT_SAMPLE, round as u64]);
    let (chosen, _) = positions.partial_shuffle(&mut rng, m);
    let mut ids: Vec<usize> = chosen.iter().map(|&p| suite.clients[p].client_id).collect();
    ids.sort_unstable();
    Ok(ids)
}

/// Mean of per-client models, summed in ascending client-id order so the
/// result does not depend on the order the entries arrive in.
pub fn aggregate(mut updates: Vec<(usize, ParamVector)>) -> Result<ParamVector> {
    updates.sort_by_key(|(id, _)| *id);
    ParamVector::mean(updates.iter().map(|(_, p)| p))
}

fn client_by_id(suite: &TaskSuite, id: usize) -> Result<&ClientPartition> {
    suite
        .client(id)
        .ok_or_else(|| Error::config(alloc::format!("unknown client {id}")))
}

/// A client-side procedure: `(partition, theta, seed) -> phi`.
pub trait LocalProcedure: Sync {
    fn run(&self, partition: &ClientPartition, theta: &ParamVector, seed: u64) -> Result<LocalUpdate>;
}

impl<F> LocalProcedure for F
where
    F: Fn(&ClientPartition, &ParamVector, u64) -> Result<LocalUpdate> + Sync,
{
    fn run(&self, partition: &ClientPartition, theta: &ParamVector, seed: u64) -> Result<LocalUpdate> {
        self(partition, theta, seed)
    }
}

/// One round of the server-side meta-gradient algorithm (FedSIM, its
/// variants, and pFedMe-mode).
pub fn fedsim_round<E: Executor>(
    theta_prev: &ParamVector,
    suite: &TaskSuite,
    scfg: &ServerConfig,
    lcfg: &LocalConfig,
    ctx: RoundContext,
    exec: &E,
) -> Result<RoundOutcome> {
    let modes = scfg.effective_modes(lcfg.loss_mode);
    let local_cfg = LocalConfig {
        loss_mode: modes.loss_mode,
        ..lcfg.clone()
    };
    let spec = &suite.model_spec;
    let procedure = |p: &ClientPartition, theta: &ParamVector, seed: u64| local_update(p, theta, &local_cfg, spec, seed);
    fedsim_round_with(theta_prev, suite, scfg, ctx, exec, &procedure)
}

/// [`fedsim_round`] with an arbitrary client procedure. The server path sees
/// only what the procedure returns.
pub fn fedsim_round_with<E: Executor, P: LocalProcedure>(
    theta_prev: &ParamVector,
    suite: &TaskSuite,
    scfg: &ServerConfig,
    ctx: RoundContext,
    exec: &E,
    procedure: &P,
) -> Result<RoundOutcome> {
    ensure!(
        scfg.strategy.is_server_meta(),
        "{} is not a server meta-gradient strategy",
        scfg.strategy
    );
    scfg.validate(suite.clients.len())?;
    let modes = scfg.effective_modes(LossMode::CustomL2);
    if scfg.needs_server_data() {
        ensure!(
            !suite.server.is_empty(),
            "{} needs server data but none is reserved",
            scfg.strategy
        );
    }
    let beta = schedule_step(scfg.beta, ctx.round, ctx.total_rounds, scfg.schedule);
    let sampled = sample_clients(suite, scfg.m, ctx.seed, ctx.round)?;

    let mut batches = ServerBatches::default();
    let mut draws = 0;
    if modes.so_mode == SoMode::ServerData {
        let mut rng = rng_for(ctx.seed, &[tag::SERVER_BATCH, ctx.round as u64]);
        batches.hessian = Some(suite.server.sample_batch(scfg.server_batch_size, &mut rng));
        draws += 1;
    }
    if modes.fo_mode == Some(FoMode::ServerData) {
        let mut rng = rng_for(ctx.seed, &[tag::SERVER_QUERY, ctx.round as u64]);
        batches.query = Some(suite.server.sample_batch(scfg.server_batch_size, &mut rng));
        draws += 1;
    }

    let results = exec.map(sampled.len(), |k| -> Result<(usize, ParamVector, u64, u64)> {
        let id = sampled[k];
        let client = client_by_id(suite, id)?;
        let local = procedure.run(client, theta_prev, ctx.client_seed(id))?;
        match modes.fo_mode {
            None => Ok((id, local.params, local.grad_evals, 0)),
            Some(fo) => {
                let parts = meta_gradient(&suite.model_spec, theta_prev, &local.params, &batches, fo, modes.so_mode, scfg)?;
                let updated = local.params.axpy(-beta, &parts.meta_grad)?;
                Ok((id, updated, local.grad_evals, parts.grad_evals_server))
            }
        }
    });

    let mut updates = Vec::with_capacity(results.len());
    let (mut client_evals, mut server_evals) = (0, 0);
    for r in results {
        let (id, params, ce, se) = r?;
        client_evals += ce;
        server_evals += se;
        updates.push((id, params));
    }
    let mean = aggregate(updates)?;
    let theta = match modes.fo_mode {
        Some(_) => mean,
        None => theta_prev.interpolate(&mean, scfg.pfedme_mixing)?,
    };
    if !theta.is_finite() {
        return Err(Error::NonFiniteLayer { layer: suite.model_spec.n_layers() });
    }
    Ok(RoundOutcome {
        theta,
        sampled,
        client_grad_evals: client_evals,
        server_grad_evals: server_evals,
        server_batch_draws: draws,
        beta_used: beta,
    })
}

/// One round of a baseline strategy (FedAvg, FedProx, Fed-Reptile,
/// Per-FedAvg(FO), FedMeta).
pub fn baseline_round<E: Executor>(
    theta_prev: &ParamVector,
    suite: &TaskSuite,
    scfg: &ServerConfig,
    lcfg: &LocalConfig,
    ctx: RoundContext,
    exec: &E,
) -> Result<RoundOutcome> {
    ensure!(
        !scfg.strategy.is_server_meta(),
        "{} is not a baseline strategy",
        scfg.strategy
    );
    scfg.validate(suite.clients.len())?;
    let beta = schedule_step(scfg.beta, ctx.round, ctx.total_rounds, scfg.schedule);
    let beta_local = scfg.beta_local.unwrap_or(beta);
    let modes = scfg.effective_modes(lcfg.loss_mode);
    let local_cfg = LocalConfig {
        loss_mode: modes.loss_mode,
        ..lcfg.clone()
    };
    let spec = &suite.model_spec;
    let sampled = sample_clients(suite, scfg.m, ctx.seed, ctx.round)?;

    let results = exec.map(sampled.len(), |k| -> Result<(usize, LocalUpdate)> {
        let id = sampled[k];
        let client = client_by_id(suite, id)?;
        let seed = ctx.client_seed(id);
        let update = match scfg.strategy {
            StrategyKind::PerFedAvgFo => perfedavg_fo_update(client, theta_prev, &local_cfg, spec, beta_local, seed)?,
            StrategyKind::FedMeta => fedmeta_update(client, theta_prev, &local_cfg, spec, beta_local, seed)?,
            _ => local_update(client, theta_prev, &local_cfg, spec, seed)?,
        };
        Ok((id, update))
    });

    let mut updates = Vec::with_capacity(results.len());
    let mut client_evals = 0;
    for r in results {
        let (id, update) = r?;
        client_evals += update.grad_evals;
        updates.push((id, update.params));
    }
    let mean = aggregate(updates)?;
    let theta = match scfg.strategy {
        StrategyKind::FedReptile => theta_prev.interpolate(&mean, beta)?,
        _ => mean,
    };
    Ok(RoundOutcome {
        theta,
        sampled,
        client_grad_evals: client_evals,
        server_grad_evals: 0,
        server_batch_draws: 0,
        beta_used: beta,
    })
}

/// Dispatches to [`fedsim_round`] or [`baseline_round`].
pub fn run_round<E: Executor>(
    theta_prev: &ParamVector,
    suite: &TaskSuite,
    scfg: &ServerConfig,
    lcfg: &LocalConfig,
    ctx: RoundContext,
    exec: &E,
) -> Result<RoundOutcome> {
    if scfg.strategy.is_server_meta() {
        fedsim_round(theta_prev, suite, scfg, lcfg, ctx, exec)
    } else {
        baseline_round(theta_prev, suite, scfg, lcfg, ctx, exec)
    }
}
