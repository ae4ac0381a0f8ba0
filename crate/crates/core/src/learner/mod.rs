//! Policy optimization: target construction, the decoupled pseudo-advantage,
//! baseline modes, and the per-update training step.

mod config;
mod losses;
mod targets;
mod trainer;

pub use config::{AlgoConfig, Mode, VhBootstrap, VhRollout};
pub use losses::{
    constraint_value_loss, cost_value_loss, policy_log_probs, policy_loss, PolicyMinibatch, PolicyStats, PolicyStep,
};
pub use targets::{
    beta_schedule, cbf_residual, dcbf_violation, doubling_schedule, gae, lagrangian_step, max_backup_targets,
    nu_schedule, penalty_cost, ppo_surrogate, pseudo_advantage, standardize_masked,
};
pub use trainer::{evaluate, summarize, EvalSummary, Nets, TrainState, Trainer, UpdateReport};

#[cfg(test)]
mod tests;
