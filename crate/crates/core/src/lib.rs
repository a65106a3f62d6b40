//! Online reward dimension reduction for multi-objective reinforcement
//! learning, with exact Pareto metrics and brute-force oracles on small MOMDPs.

pub mod error;
pub mod metrics;
pub mod momdp;
pub mod nn;
pub mod reduction;
pub mod agent;
pub mod oracle;
pub mod harness;

pub use error::{Error, Result};
