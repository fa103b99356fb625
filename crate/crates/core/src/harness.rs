//! End-to-end simulation: suite construction, the round loop, personalized
//! evaluation and parameter sweeps.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::client::{client_update_basic, train_basic, LocalConfig};
use crate::error::{ensure, Error, Result};
use crate::exec::{Executor, Serial};
use crate::model::{evaluate_metric, MetricKind};
use crate::rng::{derive_seed, rng_for, tag};
use crate::server::{run_round, RoundContext, ServerConfig, StrategyKind};
use crate::tasks::{
    gen_glyph_image_tasks, gen_rotated_cluster_tasks, gen_sine_tasks, reserve_server_partitions, SuiteKind, TaskSuite,
};
use crate::vector::ParamVector;

/// Share of the final evaluation records averaged into a run's score.
pub const SCORE_TAIL_FRACTION: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct SuiteConfig {
    pub kind: SuiteKind,
    pub n_clients: usize,
    pub samples_per_client: usize,
    /// Glyph suites only.
    pub n_classes: usize,
    /// Glyph suites only.
    pub dirichlet_alpha: f64,
    /// Glyph suites only.
    pub noise_sigma: f64,
    pub server_fraction: f64,
    pub support_frac: f64,
    /// Seed for data generation; the run seed when absent.
    pub data_seed: Option<u64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            kind: SuiteKind::SineRegression,
            n_clients: 100,
            samples_per_client: 40,
            n_classes: 8,
            dirichlet_alpha: 0.1,
            noise_sigma: 1.0,
            server_fraction: 0.05,
            support_frac: 0.8,
            data_seed: None,
        }
    }
}

impl SuiteConfig {
    /// Generates the clients, reserves server partitions and splits every
    /// client into support and query sets.
    pub fn build(&self, run_seed: u64) -> Result<TaskSuite> {
        let seed = self.data_seed.unwrap_or(run_seed);
        let gen_seed = derive_seed(seed, &[tag::SUITE]);
        let suite = match self.kind {
            SuiteKind::SineRegression => gen_sine_tasks(self.n_clients, self.samples_per_client, gen_seed)?,
            SuiteKind::RotatedClusters => {
                gen_rotated_cluster_tasks(self.n_clients, self.samples_per_client, gen_seed)?
            }
            SuiteKind::GlyphImages => gen_glyph_image_tasks(
                self.n_clients,
                self.n_classes,
                self.dirichlet_alpha,
                self.noise_sigma,
                self.samples_per_client,
                gen_seed,
            )?,
        };
        let suite = reserve_server_partitions(suite, self.server_fraction, derive_seed(seed, &[tag::RESERVE]))?;
        suite.with_support_query(self.support_frac, derive_seed(seed, &[tag::SPLIT]))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ExperimentConfig {
    pub suite: SuiteConfig,
    pub local: LocalConfig,
    pub server: ServerConfig,
    pub total_rounds: usize,
    /// Evaluate every this many rounds (and after the last); 0 disables
    /// evaluation.
    pub eval_every: usize,
    /// Clients fine-tuned and scored per evaluation.
    pub eval_m: usize,
    /// Fine-tuning epochs before scoring; the local epoch count when absent.
    pub finetune_epochs: Option<usize>,
    /// Epochs of plain descent on the pooled server data that produce the
    /// initial global model, for every strategy. Skipped without server data.
    pub pretrain_epochs: usize,
    pub seeds: Vec<u64>,
    pub output_path: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            suite: SuiteConfig::default(),
            local: LocalConfig::default(),
            server: ServerConfig::default(),
            total_rounds: 200,
            eval_every: 1,
            eval_m: 10,
            finetune_epochs: None,
            pretrain_epochs: 5,
            seeds: vec![0],
            output_path: String::from("metrics.csv"),
        }
    }
}

impl ExperimentConfig {
    /// Checks that do not need the generated suite.
    pub fn validate(&self) -> Result<()> {
        ensure!(self.total_rounds >= 1, "total_rounds must be at least 1");
        ensure!(self.eval_m >= 1, "eval_m must be at least 1");
        ensure!(!self.seeds.is_empty(), "at least one seed is required");
        self.local.validate()?;
        if self.server.needs_server_data() {
            ensure!(
                self.suite.server_fraction > 0.0,
                "strategy {} needs server data; set a positive server_fraction",
                self.server.strategy
            );
        }
        Ok(())
    }

    /// Checks against a generated suite.
    pub fn validate_suite(&self, suite: &TaskSuite) -> Result<()> {
        suite.validate()?;
        let n = suite.clients.len();
        self.server.validate(n)?;
        ensure!(self.eval_m <= n, "eval_m = {} exceeds the {n} clients", self.eval_m);
        if self.server.needs_server_data() {
            ensure!(
                !suite.server.is_empty(),
                "strategy {} needs server data but none is reserved",
                self.server.strategy
            );
        }
        for c in &suite.clients {
            ensure!(
                c.train.len() >= 2 * self.local.batch_size,
                "client {} has {} training samples, fewer than twice the batch size",
                c.client_id,
                c.train.len()
            );
            if self.server.strategy.needs_support_query() {
                ensure!(c.support.is_some(), "client {} lacks a support/query split", c.client_id);
            }
        }
        Ok(())
    }

    pub fn finetune_epochs(&self) -> usize {
        self.finetune_epochs.unwrap_or(self.local.epochs)
    }
}

/// Metrics of one evaluated round. Gradient counters are cumulative.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RoundRecord {
    pub round: usize,
    pub strategy: StrategyKind,
    pub personalized_metric: f64,
    pub metric_kind: MetricKind,
    pub theta_norm: f64,
    pub client_grad_evals: u64,
    pub server_grad_evals: u64,
    pub beta_used: f64,
}

/// Fine-tunes `theta` on `eval_m` freshly sampled clients with the basic
/// loss and returns their mean held-out metric.
pub fn personalized_evaluation<E: Executor>(
    theta: &ParamVector,
    suite: &TaskSuite,
    lcfg: &LocalConfig,
    finetune_epochs: usize,
    eval_m: usize,
    seed: u64,
    round: usize,
    exec: &E,
) -> Result<f64> {
    let n = suite.clients.len();
    ensure!(eval_m >= 1 && eval_m <= n, "cannot evaluate {eval_m} of {n} clients");
    let mut positions: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed, &[tag::EVAL_SAMPLE, round as u64]);
    let (chosen, _) = positions.partial_shuffle(&mut rng, eval_m);
    chosen.sort_unstable();
    let chosen: Vec<usize> = chosen.to_vec();
    let cfg = LocalConfig {
        epochs: finetune_epochs.max(1),
        ..lcfg.clone()
    };
    let spec = &suite.model_spec;
    let scores = exec.map(chosen.len(), |k| -> Result<f64> {
        let client = &suite.clients[chosen[k]];
        let tuned;
        let params = if finetune_epochs == 0 {
            theta
        } else {
            let s = derive_seed(seed, &[tag::FINETUNE, round as u64, client.client_id as u64]);
            tuned = client_update_basic(client, theta, &cfg, spec, s)?.params;
            &tuned
        };
        evaluate_metric(spec, params, &client.eval)
    });
    let mut total = 0.0;
    for s in scores {
        total += s?;
    }
    Ok(total / chosen.len() as f64)
}

/// Records plus the global model after every round.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutput {
    pub records: Vec<RoundRecord>,
    pub final_theta: ParamVector,
    /// `theta_t` after each round; empty unless requested.
    pub trajectory: Vec<ParamVector>,
}

/// Random initialization, then `pretrain_epochs` of descent on the server
/// pool when there is one.
pub fn initial_model(cfg: &ExperimentConfig, suite: &TaskSuite, seed: u64) -> Result<ParamVector> {
    let theta = suite.model_spec.init_params(&mut rng_for(seed, &[tag::INIT]));
    if cfg.pretrain_epochs == 0 || suite.server.is_empty() {
        return Ok(theta);
    }
    let pcfg = LocalConfig {
        epochs: cfg.pretrain_epochs,
        ..cfg.local.clone()
    };
    let s = derive_seed(seed, &[tag::PRETRAIN]);
    Ok(train_basic(&suite.server.pooled, &theta, &pcfg, &suite.model_spec, s)?.params)
}

/// Runs `cfg` for one seed on a prepared suite.
pub fn simulate<E: Executor>(
    cfg: &ExperimentConfig,
    suite: &TaskSuite,
    seed: u64,
    exec: &E,
    keep_trajectory: bool,
) -> Result<SimulationOutput> {
    cfg.validate()?;
    cfg.validate_suite(suite)?;
    let mut theta = initial_model(cfg, suite, seed)?;
    let metric_kind = suite.model_spec.metric_kind();
    let mut records = Vec::new();
    let mut trajectory = Vec::new();
    let (mut client_evals, mut server_evals) = (0u64, 0u64);
    for round in 0..cfg.total_rounds {
        let ctx = RoundContext {
            round,
            total_rounds: cfg.total_rounds,
            seed,
        };
        let outcome =
            run_round(&theta, suite, &cfg.server, &cfg.local, ctx, exec).map_err(|e| e.in_round(round))?;
        theta = outcome.theta;
        client_evals += outcome.client_grad_evals;
        server_evals += outcome.server_grad_evals;
        if keep_trajectory {
            trajectory.push(theta.clone());
        }
        let due = cfg.eval_every > 0 && (round % cfg.eval_every == 0 || round + 1 == cfg.total_rounds);
        if due {
            let metric = personalized_evaluation(
                &theta,
                suite,
                &cfg.local,
                cfg.finetune_epochs(),
                cfg.eval_m,
                seed,
                round,
                exec,
            )
            .map_err(|e| e.in_round(round))?;
            if !metric.is_finite() {
                return Err(Error::NonFiniteLayer { layer: suite.model_spec.n_layers() }.in_round(round));
            }
            records.push(RoundRecord {
                round,
                strategy: cfg.server.strategy,
                personalized_metric: metric,
                metric_kind,
                theta_norm: theta.norm(),
                client_grad_evals: client_evals,
                server_grad_evals: server_evals,
                beta_used: outcome.beta_used,
            });
        }
    }
    Ok(SimulationOutput {
        records,
        final_theta: theta,
        trajectory,
    })
}

/// Builds the suite for `seed` and runs the experiment.
pub fn run_simulation<E: Executor>(cfg: &ExperimentConfig, seed: u64, exec: &E) -> Result<Vec<RoundRecord>> {
    cfg.validate()?;
    let suite = cfg.suite.build(seed)?;
    Ok(simulate(cfg, &suite, seed, exec, false)?.records)
}

/// First round whose metric reaches `target` (at least for accuracy, at
/// most for MSE).
pub fn rounds_to_target(records: &[RoundRecord], target: f64) -> Option<usize> {
    records
        .iter()
        .find(|r| r.metric_kind.at_least_as_good(r.personalized_metric, target))
        .map(|r| r.round)
}

/// Mean metric over the final [`SCORE_TAIL_FRACTION`] of the records.
pub fn run_score(records: &[RoundRecord]) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let tail = ((records.len() as f64 * SCORE_TAIL_FRACTION) as usize).max(1);
    let slice = &records[records.len() - tail..];
    Some(slice.iter().map(|r| r.personalized_metric).sum::<f64>() / slice.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GridAxis {
    ServerFraction,
    LocalEpochs,
    Strategy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(untagged))]
pub enum GridValue {
    Fraction(f64),
    Epochs(usize),
    Strategy(StrategyKind),
}

impl GridValue {
    fn axis(&self) -> GridAxis {
        match self {
            GridValue::Fraction(_) => GridAxis::ServerFraction,
            GridValue::Epochs(_) => GridAxis::LocalEpochs,
            GridValue::Strategy(_) => GridAxis::Strategy,
        }
    }
}

/// Configuration of one grid cell. A zero server fraction turns a strategy
/// that needs server data into pFedMe-mode, its no-server-data limit.
pub fn apply_grid_value(base: &ExperimentConfig, value: GridValue) -> ExperimentConfig {
    let mut cfg = base.clone();
    match value {
        GridValue::Fraction(f) => {
            cfg.suite.server_fraction = f;
            if f == 0.0 && cfg.server.needs_server_data() {
                cfg.server.strategy = StrategyKind::PfedmeMode;
            }
        }
        GridValue::Epochs(e) => cfg.local.epochs = e,
        GridValue::Strategy(s) => cfg.server.strategy = s,
    }
    cfg
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridRun {
    pub value: GridValue,
    pub seed: u64,
    pub strategy: StrategyKind,
    pub score: f64,
    pub records: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridSummary {
    pub value: GridValue,
    pub runs: usize,
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GridResult {
    pub axis: GridAxis,
    pub metric_kind: MetricKind,
    pub runs: Vec<GridRun>,
    pub summary: Vec<GridSummary>,
}

impl GridResult {
    /// Scores of the runs for `value`, in seed order.
    pub fn scores(&self, value: GridValue) -> Vec<f64> {
        self.runs.iter().filter(|r| r.value == value).map(|r| r.score).collect()
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, libm::sqrt(var))
}

/// One [`run_simulation`] per `(value, seed)` pair; cells run through
/// `exec`, each cell serially inside.
pub fn run_grid<E: Executor>(
    base: &ExperimentConfig,
    axis: GridAxis,
    values: &[GridValue],
    exec: &E,
) -> Result<GridResult> {
    ensure!(!values.is_empty(), "grid needs at least one value");
    ensure!(
        values.iter().all(|v| v.axis() == axis),
        "grid values do not match the {axis:?} axis"
    );
    base.validate().or_else(|e| match axis {
        // server-data checks are re-done per cell
        GridAxis::ServerFraction | GridAxis::Strategy => Ok(()),
        GridAxis::LocalEpochs => Err(e),
    })?;
    let cells: Vec<(GridValue, u64)> = values
        .iter()
        .flat_map(|&v| base.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results = exec.map(cells.len(), |k| -> Result<GridRun> {
        let (value, seed) = cells[k];
        let cfg = apply_grid_value(base, value);
        let records = run_simulation(&cfg, seed, &Serial)?;
        let score = run_score(&records).ok_or_else(|| Error::config("grid runs need evaluation enabled"))?;
        Ok(GridRun {
            value,
            seed,
            strategy: cfg.server.strategy,
            score,
            records,
        })
    });
    let runs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let metric_kind = runs[0].records[0].metric_kind;
    let mut result = GridResult {
        axis,
        metric_kind,
        runs,
        summary: Vec::new(),
    };
    result.summary = values
        .iter()
        .map(|&value| {
            let scores = result.scores(value);
            let (mean, stddev) = mean_std(&scores);
            GridSummary {
                value,
                runs: scores.len(),
                mean,
                stddev,
            }
        })
        .collect();
    Ok(result)
}
