//! Joint channel and power allocation for interference-limited wireless
//! networks with a heterogeneous graph neural network, classical baselines
//! (WMMSE, exhaustive search, round-robin, closest-split) and an evaluation
//! harness.

pub mod autodiff;
pub mod baselines;
pub mod error;
pub mod harness;
pub mod hetgraph;
pub mod jcpgnn;
pub mod metrics;
pub mod netgen;
pub mod rng;

pub use error::{Error, Result};
