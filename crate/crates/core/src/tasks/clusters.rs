use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{eval_count, ClientPartition, Descriptor, SuiteKind, TaskSuite};
use crate::error::{ensure, Result};
use crate::model::{Activation, Batch, LossKind, ModelSpec};
use crate::rng::{rng_for, tag};

pub const CLUSTER_CLASSES: usize = 4;
const CLUSTER_RADIUS: f64 = 2.0;
const CLUSTER_SPREAD: f64 = 0.6;

/// Four Gaussian blobs on a circle, rotated by a per-client angle. Labels are
/// balanced; what differs between clients is where each class sits.
pub fn gen_rotated_cluster_tasks(
    n_clients: usize,
    samples_per_client: usize,
    rng_seed: u64,
) -> Result<TaskSuite> {
    ensure!(n_clients >= 2, "need at least two clients");
    ensure!(
        samples_per_client >= 4,
        "need at least 4 samples per client, got {samples_per_client}"
    );
    let spec = ModelSpec::new(
        vec![2, 16, CLUSTER_CLASSES],
        Activation::Tanh,
        LossKind::SoftmaxCrossEntropy,
    )?;
    let noise = Normal::new(0.0, CLUSTER_SPREAD).expect("valid spread");
    let clients = (0..n_clients)
        .map(|id| {
            let mut rng = rng_for(rng_seed, &[tag::SUITE, id as u64]);
            let angle = rng.random_range(0.0..TAU);
            let mut inputs = Vec::with_capacity(2 * samples_per_client);
            let mut targets = Vec::with_capacity(CLUSTER_CLASSES * samples_per_client);
            for s in 0..samples_per_client {
                let label = (s + id) % CLUSTER_CLASSES;
                let centre = angle + TAU * label as f64 / CLUSTER_CLASSES as f64;
                inputs.push(CLUSTER_RADIUS * libm::cos(centre) + noise.sample(&mut rng));
                inputs.push(CLUSTER_RADIUS * libm::sin(centre) + noise.sample(&mut rng));
                targets.extend((0..CLUSTER_CLASSES).map(|k| (k == label) as u8 as f64));
            }
            let n_train = samples_per_client - eval_count(samples_per_client);
            Ok(ClientPartition {
                client_id: id,
                train: Batch::new(
                    inputs[..2 * n_train].to_vec(),
                    targets[..CLUSTER_CLASSES * n_train].to_vec(),
                    2,
                    CLUSTER_CLASSES,
                )?,
                eval: Batch::new(
                    inputs[2 * n_train..].to_vec(),
                    targets[CLUSTER_CLASSES * n_train..].to_vec(),
                    2,
                    CLUSTER_CLASSES,
                )?,
                support: None,
                query: None,
                descriptor: Descriptor::Rotation { angle },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskSuite::fresh(SuiteKind::RotatedClusters, spec, clients))
}
