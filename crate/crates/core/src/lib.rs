//! Disturbance-injection robustness benchmark for continuous-control agents.

pub mod agents;
pub mod disturbance;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod rng;

pub use error::{Error, Result};
