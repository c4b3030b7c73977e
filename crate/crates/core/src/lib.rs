//! Pairwise click-debiasing for learning to rank.
//!
//! Click simulation under several examination models, intervention-based
//! propensity estimation, unbiased pairwise losses and lambda-gradients, a
//! gradient-boosted tree trainer and ranking metrics.

pub mod data;
pub mod debias;
pub mod error;
pub mod estimate;
pub mod exam;
pub mod experiment;
pub mod metrics;
pub mod numeric;
pub mod rng;
pub mod sim;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
