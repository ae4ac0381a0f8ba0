//! Graph-attention encoder with policy, cost-value, and constraint-value heads.
//!
//! Each agent's observation is a star graph into its own node. An encoder
//! layer lets the receiver attend over every incoming edge (its self-loop
//! included) with multi-head dot-product attention, followed by a residual
//! connection and layer normalization.

mod batch;
mod nets;

#[cfg(test)]
mod tests;

pub use batch::{attenuation, GraphBatch, ATTENUATION_BAND, INPUT_DIM};
pub use nets::{
    attention_weights, encode, gaussian_entropy, gaussian_log_prob, ConstraintValueNet, CostValueNet, NetConfig, PolicyNet, PolicyOutput, Pooling,
    LOG_STD_MAX, LOG_STD_MIN,
};
