//! Deterministic seed derivation.
//!
//! Every random draw in a simulation is keyed by a tuple such as
//! `(run seed, round, client id, purpose)`, never by execution order, so
//! concurrent and serial schedules see identical streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Purpose tags mixed into derived seeds.
pub mod tag {
    pub const CLIENT_SAMPLE: u64 = 0x01;
    pub const CLIENT_UPDATE: u64 = 0x02;
    pub const SERVER_BATCH: u64 = 0x03;
    pub const SERVER_QUERY: u64 = 0x04;
    pub const EVAL_SAMPLE: u64 = 0x05;
    pub const FINETUNE: u64 = 0x06;
    pub const INIT: u64 = 0x07;
    pub const SUITE: u64 = 0x08;
    pub const RESERVE: u64 = 0x09;
    pub const SPLIT: u64 = 0x0a;
    pub const EPOCH: u64 = 0x0b;
    pub const PRETRAIN: u64 = 0x0c;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `parts` into `base`. Order-sensitive.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_for(base: u64, parts: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, parts))
}
