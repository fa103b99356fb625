#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod client;
pub mod error;
pub mod exec;
pub mod fixtures;
pub mod harness;
pub mod hvp;
pub mod model;
pub mod oracle;
pub mod rng;
pub mod server;
pub mod tasks;
pub mod vector;

pub use error::{Error, Result};
pub use vector::ParamVector;
