//! Safe multi-agent reinforcement learning with learned discrete graph
//! control barrier functions.

pub mod cli;
pub mod diffmath;
pub mod env;
pub mod error;
pub mod gnn;
pub mod learner;
pub mod oracles;
pub mod rollout;

pub use error::{Error, Result};
