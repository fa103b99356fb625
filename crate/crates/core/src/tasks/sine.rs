use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use super::{eval_count, ClientPartition, Descriptor, SuiteKind, TaskSuite};
use crate::error::{ensure, Result};
use crate::model::{Activation, Batch, LossKind, ModelSpec};
use crate::rng::{rng_for, tag};

pub const AMPLITUDE_RANGE: (f64, f64) = (0.1, 5.0);
pub const PHASE_RANGE: (f64, f64) = (0.0, PI);
pub const X_RANGE: (f64, f64) = (-5.0, 5.0);

/// Sine-wave regression clients: client `i` fits `a_i sin(x + p_i)` with its
/// own amplitude and phase. Each client gets `samples_per_client` points, a
/// quarter of which are held out for evaluation.
pub fn gen_sine_tasks(n_clients: usize, samples_per_client: usize, rng_seed: u64) -> Result<TaskSuite> {
    ensure!(n_clients >= 2, "need at least two clients");
    ensure!(
        samples_per_client >= 4,
        "need at least 4 samples per client, got {samples_per_client}"
    );
    let spec = ModelSpec::new(vec![1, 16, 16, 1], Activation::Tanh, LossKind::Mse)?;
    let clients = (0..n_clients)
        .map(|id| {
            let mut rng = rng_for(rng_seed, &[tag::SUITE, id as u64]);
            let amplitude = rng.random_range(AMPLITUDE_RANGE.0..=AMPLITUDE_RANGE.1);
            let phase = rng.random_range(PHASE_RANGE.0..=PHASE_RANGE.1);
            let xs: Vec<f64> = (0..samples_per_client)
                .map(|_| rng.random_range(X_RANGE.0..=X_RANGE.1))
                .collect();
            let ys: Vec<f64> = xs.iter().map(|&x| amplitude * libm::sin(x + phase)).collect();
            let n_train = samples_per_client - eval_count(samples_per_client);
            Ok(ClientPartition {
                client_id: id,
                train: Batch::new(xs[..n_train].to_vec(), ys[..n_train].to_vec(), 1, 1)?,
                eval: Batch::new(xs[n_train..].to_vec(), ys[n_train..].to_vec(), 1, 1)?,
                support: None,
                query: None,
                descriptor: Descriptor::Sine { amplitude, phase },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TaskSuite::fresh(SuiteKind::SineRegression, spec, clients))
}
