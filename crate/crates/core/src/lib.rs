//! RIS placement planning: a ray-traced channel model, a deep Q-learning
//! search agent and reference solvers.

pub mod agent;
pub mod baselines;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod neuralnet;
pub mod propagation;
pub mod ris_link;
pub mod scenario;

pub use error::{Error, Result};
