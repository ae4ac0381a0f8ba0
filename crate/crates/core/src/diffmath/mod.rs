//! Dense tensors, reverse-mode differentiation, and optimizers.
//!
//! All primitives are generic over [`Real`] so the same code paths run in
//! `f32` for training and in `f64` for finite-difference checks.

pub mod gradcheck;
mod init;
mod optim;
mod params;
mod real;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
pub use init::orthogonal_init;
pub use optim::{adam_step, add_sets, clip_grad_norm, AdamConfig, AdamState};
pub use params::ParamSet;
pub use real::Real;
pub use tape::{grad, Gradients, Index, ParamVars, Tape, Var, LN_EPS};
pub use tensor::Tensor;
