//! Differentiable losses, generic over the scalar type so the exact
//! training code can be checked in `f64` against finite differences.

use crate::diffmath::{ParamVars, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gnn::{gaussian_entropy, gaussian_log_prob, ConstraintValueNet, CostValueNet, GraphBatch, PolicyNet, Pooling};

/// Agent-transitions sharing one position inside a chunk.
///
/// Feedforward minibatches have a single step; recurrent ones carry one
/// step per offset into the chunk, with rows aligned across steps.
#[derive(Clone, Debug)]
pub struct PolicyStep<T: Real = f32> {
    pub batch: GraphBatch<T>,
    /// `[B, A]` actions as sampled (pre-clamp).
    pub actions: Tensor<T>,
    /// `[B]` log-probabilities under the parameters that collected the data.
    pub old_log_prob: Vec<f64>,
    /// `[B]` pseudo-advantages, constants of the loss.
    pub advantage: Vec<f64>,
}

/// Data for one policy-gradient step.
#[derive(Clone, Debug)]
pub struct PolicyMinibatch<T: Real = f32> {
    pub steps: Vec<PolicyStep<T>>,
    /// `[B, hidden]` recurrent state entering the first step.
    pub initial_hidden: Option<Tensor<T>>,
}

impl<T: Real> PolicyMinibatch<T> {
    pub fn samples(&self) -> usize {
        self.steps.iter().map(|s| s.batch.n_graphs).sum()
    }
}

/// Log-probabilities `[B]` of each step's actions, in step order.
pub fn policy_log_probs<T: Real>(
    tape: &mut Tape<T>,
    pv: &ParamVars,
    net: &PolicyNet,
    mb: &PolicyMinibatch<T>,
) -> (Vec<Var>, Var) {
    let mut hidden = mb.initial_hidden.as_ref().map(|h| tape.constant(h.clone()));
    let mut out = Vec::with_capacity(mb.steps.len());
    let mut log_std = None;
    for step in &mb.steps {
        let (mean, ls, next) = net.forward(tape, pv, &step.batch, hidden);
        hidden = next;
        let a = tape.constant(step.actions.clone());
        out.push(gaussian_log_prob(tape, mean, ls, a));
        log_std = Some(ls);
    }
    let log_std = log_std.unwrap_or_else(|| {
        let ls = pv.get("log_std");
        tape.clamp(ls, crate::gnn::LOG_STD_MIN, crate::gnn::LOG_STD_MAX)
    });
    (out, log_std)
}

/// Scalars reported alongside the policy loss.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PolicyStats {
    pub surrogate: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub max_ratio_deviation: f64,
}

/// Clipped surrogate in the cost convention minus the entropy bonus.
///
/// Per sample `max(ρ·Ã, clip(ρ, 1−ε, 1+ε)·Ã)` with
/// `ρ = exp(log π(a|o) − log π_old(a|o))`, averaged over every
/// agent-transition of the minibatch.
pub fn policy_loss<T: Real>(
    tape: &mut Tape<T>,
    pv: &ParamVars,
    net: &PolicyNet,
    mb: &PolicyMinibatch<T>,
    clip: f64,
    entropy_coef: f64,
) -> Result<(Var, PolicyStats)> {
    let n = mb.samples();
    if n == 0 {
        return Err(Error::Invalid("empty policy minibatch".into()));
    }
    let (log_probs, log_std) = policy_log_probs(tape, pv, net, mb);
    let mut total: Option<Var> = None;
    let mut stats = PolicyStats::default();
    let mut clipped = 0usize;
    for (step, lp) in mb.steps.iter().zip(log_probs) {
        let b = step.batch.n_graphs;
        if step.old_log_prob.len() != b || step.advantage.len() != b {
            return Err(Error::ShapeMismatch {
                context: "policy minibatch".into(),
                expected: vec![b],
                got: vec![step.old_log_prob.len(), step.advantage.len()],
            });
        }
        let old = tape.constant(Tensor::vector(step.old_log_prob.iter().map(|&x| T::from_f64(x)).collect()));
        let adv = tape.constant(Tensor::vector(step.advantage.iter().map(|&x| T::from_f64(x)).collect()));
        let diff = tape.sub(lp, old);
        let ratio = tape.exp(diff);
        for &r in tape.value(ratio).data() {
            let r = r.as_f64();
            if !r.is_finite() {
                return Err(Error::NonFinite { op: "policy ratio" });
            }
            stats.max_ratio_deviation = stats.max_ratio_deviation.max((r - 1.0).abs());
            if (r - 1.0).abs() > clip {
                clipped += 1;
            }
        }
        let raw = tape.mul(ratio, adv);
        let clamped = tape.clamp(ratio, 1.0 - clip, 1.0 + clip);
        let clamped = tape.mul(clamped, adv);
        let surr = tape.maximum(raw, clamped);
        let s = tape.sum_all(surr);
        total = Some(match total {
            Some(t) => tape.add(t, s),
            None => s,
        });
    }
    let surrogate = tape.scale(total.expect("at least one step"), 1.0 / n as f64);
    let entropy = gaussian_entropy(tape, log_std);
    stats.surrogate = tape.value(surrogate).item().as_f64();
    stats.entropy = tape.value(entropy).item().as_f64();
    stats.clip_fraction = clipped as f64 / n as f64;
    let bonus = tape.scale(entropy, -entropy_coef);
    Ok((tape.add(surrogate, bonus), stats))
}

fn mse<T: Real>(tape: &mut Tape<T>, pred: Var, targets: &[f64]) -> Result<Var> {
    if tape.value(pred).numel() != targets.len() {
        return Err(Error::ShapeMismatch {
            context: "regression targets".into(),
            expected: tape.shape(pred).to_vec(),
            got: vec![targets.len()],
        });
    }
    let shape = tape.shape(pred).to_vec();
    let y = tape.constant(Tensor::new(shape, targets.iter().map(|&x| T::from_f64(x)).collect())?);
    let d = tape.sub(pred, y);
    let sq = tape.square(d);
    Ok(tape.mean_all(sq))
}

/// Mean squared error of pooled cost values against `targets[pool]`.
pub fn cost_value_loss<T: Real>(
    tape: &mut Tape<T>,
    pv: &ParamVars,
    net: &CostValueNet,
    batch: &GraphBatch<T>,
    pool: &Pooling,
    targets: &[f64],
) -> Result<Var> {
    let v = net.forward(tape, pv, batch, pool);
    mse(tape, v, targets)
}

/// Mean squared error of per-agent constraint values against row-major
/// `[graphs, constraints]` targets.
pub fn constraint_value_loss<T: Real>(
    tape: &mut Tape<T>,
    pv: &ParamVars,
    net: &ConstraintValueNet,
    batch: &GraphBatch<T>,
    targets: &[f64],
) -> Result<Var> {
    let v = net.forward(tape, pv, batch);
    mse(tape, v, targets)
}
