//! Structural compositionality probes for small odd-one-out networks.

pub mod analysis;
pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod language;
pub mod model;
pub mod rng;
pub mod sparsify;
pub mod task;
pub mod vision;

pub use error::{Error, Result};
