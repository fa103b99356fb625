//! Synthetic non-i.i.d. federated tasks, server-data reservation and
//! support/query splitting.

mod clusters;
mod glyph;
mod sine;

use alloc::vec::Vec;

use rand::seq::SliceRandom;

pub use clusters::gen_rotated_cluster_tasks;
pub use glyph::{gen_glyph_image_tasks, glyph_prototype, GLYPH_CLASSES, GLYPH_SIDE};
pub use sine::gen_sine_tasks;

use crate::error::{ensure, Result};
use crate::model::{Batch, ModelSpec};
use crate::rng::{rng_for, tag, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SuiteKind {
    SineRegression,
    RotatedClusters,
    GlyphImages,
}

/// Parameters of the distribution a client's samples come from.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Descriptor {
    Sine { amplitude: f64, phase: f64 },
    Rotation { angle: f64 },
    LabelHistogram(Vec<usize>),
}

/// One client's private data.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClientPartition {
    pub client_id: usize,
    pub train: Batch,
    pub eval: Batch,
    pub support: Option<Batch>,
    pub query: Option<Batch>,
    pub descriptor: Descriptor,
}

impl ClientPartition {
    pub fn sample_count(&self) -> usize {
        self.train.len() + self.eval.len()
    }
}

/// Whole client partitions held back at the server.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ServerDataset {
    pub reserved_ids: Vec<usize>,
    pub partitions: Vec<Batch>,
    pub pooled: Batch,
}

impl ServerDataset {
    pub fn empty(input_dim: usize, target_dim: usize) -> Self {
        ServerDataset {
            reserved_ids: Vec::new(),
            partitions: Vec::new(),
            pooled: Batch::empty(input_dim, target_dim),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pooled.is_empty()
    }

    /// Mini-batch of up to `size` pooled samples drawn without replacement.
    pub fn sample_batch(&self, size: usize, rng: &mut SimRng) -> Batch {
        let n = self.pooled.len();
        if size >= n {
            return self.pooled.clone();
        }
        let mut idx: Vec<usize> = (0..n).collect();
        let (chosen, _) = idx.partial_shuffle(rng, size);
        self.pooled.select(chosen)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskSuite {
    pub kind: SuiteKind,
    pub model_spec: ModelSpec,
    pub clients: Vec<ClientPartition>,
    pub server: ServerDataset,
    pub server_fraction: f64,
}

impl TaskSuite {
    pub(crate) fn fresh(kind: SuiteKind, model_spec: ModelSpec, clients: Vec<ClientPartition>) -> Self {
        let server = ServerDataset::empty(model_spec.input_dim(), model_spec.output_dim());
        TaskSuite {
            kind,
            model_spec,
            clients,
            server,
            server_fraction: 0.0,
        }
    }

    pub fn total_samples(&self) -> usize {
        self.server.pooled.len() + self.clients.iter().map(|c| c.sample_count()).sum::<usize>()
    }

    pub fn client(&self, id: usize) -> Option<&ClientPartition> {
        self.clients.iter().find(|c| c.client_id == id)
    }

    /// Applies [`split_support_query`] to every client with per-client seeds.
    pub fn with_support_query(mut self, support_frac: f64, rng_seed: u64) -> Result<Self> {
        let clients = core::mem::take(&mut self.clients);
        self.clients = clients
            .into_iter()
            .map(|c| {
                let seed = crate::rng::derive_seed(rng_seed, &[tag::SPLIT, c.client_id as u64]);
                split_support_query(c, support_frac, seed)
            })
            .collect::<Result<_>>()?;
        Ok(self)
    }

    /// Checks the structural invariants: shapes, id uniqueness, server
    /// pooling and support/query consistency.
    pub fn validate(&self) -> Result<()> {
        let (din, dout) = (self.model_spec.input_dim(), self.model_spec.output_dim());
        ensure!(self.clients.len() >= 2, "a suite needs at least two clients");
        let mut ids: Vec<usize> = self.clients.iter().map(|c| c.client_id).collect();
        ids.extend(self.server.reserved_ids.iter().copied());
        let total = ids.len();
        ids.sort_unstable();
        ids.dedup();
        ensure!(ids.len() == total, "client ids are not unique");
        let shaped = |b: &Batch| b.input_dim() == din && b.target_dim() == dout;
        for c in &self.clients {
            ensure!(
                shaped(&c.train) && shaped(&c.eval),
                "client {} has mis-shaped data",
                c.client_id
            );
            ensure!(
                !c.train.is_empty() && !c.eval.is_empty(),
                "client {} has an empty split",
                c.client_id
            );
            match (&c.support, &c.query) {
                (Some(s), Some(q)) => ensure!(
                    s.len() + q.len() == c.train.len() && shaped(s) && shaped(q),
                    "client {} support/query do not partition train",
                    c.client_id
                ),
                (None, None) => {}
                _ => ensure!(false, "client {} has half a support/query split", c.client_id),
            }
        }
        ensure!(
            self.server.partitions.len() == self.server.reserved_ids.len(),
            "server partitions and ids disagree"
        );
        let pooled = Batch::concat(din, dout, &self.server.partitions)?;
        ensure!(
            pooled == self.server.pooled,
            "server pooled data is not the concatenation of its partitions"
        );
        Ok(())
    }
}

/// Number of items a fraction selects, rounding up but tolerating
/// representation error (0.05 * 100 is 5, not 6).
pub(crate) fn ceil_fraction(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let floor = libm::floor(raw);
    if raw - floor <= 1e-9 * (1.0 + raw) {
        floor as usize
    } else {
        floor as usize + 1
    }
}

/// Moves `ceil(fraction * n)` randomly chosen whole client partitions into
/// the server dataset.
pub fn reserve_server_partitions(
    mut suite: TaskSuite,
    fraction: f64,
    rng_seed: u64,
) -> Result<TaskSuite> {
    ensure!(
        (0.0..1.0).contains(&fraction),
        "server fraction must lie in [0, 1), got {fraction}"
    );
    ensure!(
        suite.server.is_empty(),
        "suite already has reserved server data"
    );
    let n = suite.clients.len();
    let k = ceil_fraction(fraction, n);
    ensure!(
        n - k >= 2,
        "reserving {k} of {n} partitions leaves fewer than two clients"
    );
    let mut rng = rng_for(rng_seed, &[tag::RESERVE]);
    let mut positions: Vec<usize> = (0..n).collect();
    let (chosen, _) = positions.partial_shuffle(&mut rng, k);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();

    let (din, dout) = (suite.model_spec.input_dim(), suite.model_spec.output_dim());
    let mut reserved_ids = Vec::with_capacity(k);
    let mut partitions = Vec::with_capacity(k);
    let mut remaining = Vec::with_capacity(n - k);
    for (pos, client) in suite.clients.into_iter().enumerate() {
        if chosen.binary_search(&pos).is_ok() {
            reserved_ids.push(client.client_id);
            partitions.push(Batch::concat(din, dout, [&client.train, &client.eval])?);
        } else {
            remaining.push(client);
        }
    }
    let pooled = Batch::concat(din, dout, &partitions)?;
    suite.clients = remaining;
    suite.server = ServerDataset {
        reserved_ids,
        partitions,
        pooled,
    };
    suite.server_fraction = fraction;
    Ok(suite)
}

/// Splits a client's training data into disjoint support
/// (`ceil(support_frac * n)` samples) and query (the rest) sets.
pub fn split_support_query(
    mut partition: ClientPartition,
    support_frac: f64,
    rng_seed: u64,
) -> Result<ClientPartition> {
    ensure!(
        support_frac > 0.0 && support_frac < 1.0,
        "support fraction must lie in (0, 1), got {support_frac}"
    );
    let n = partition.train.len();
    let n_support = ceil_fraction(support_frac, n);
    ensure!(
        n_support >= 1 && n_support < n,
        "client {} has {n} training samples, too few for a support/query split",
        partition.client_id
    );
    let mut rng = rng_for(rng_seed, &[tag::SPLIT]);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    partition.support = Some(partition.train.select(&idx[..n_support]));
    partition.query = Some(partition.train.select(&idx[n_support..]));
    Ok(partition)
}

/// Splits `n` generated samples into train and eval counts.
pub(crate) fn eval_count(n: usize) -> usize {
    (n / 4).max(1)
}
