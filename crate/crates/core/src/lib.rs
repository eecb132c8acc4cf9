pub mod beamforming;
pub mod channel;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod manopt;
pub mod network;
pub mod numerics;
pub mod rng;

pub use error::{Error, Result};
