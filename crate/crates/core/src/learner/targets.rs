//! Scalar target and advantage formulas.

use crate::error::{Error, Result};

/// Generalized advantage estimates under the cost convention.
///
/// `values` holds `V(x⁰) … V(xᵀ)` (bootstrap last). Returns `(advantages,
/// regression targets)`, each of length `T`.
pub fn gae(costs: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if values.len() != costs.len() + 1 {
        return Err(Error::Invalid(format!(
            "gae: {} costs need {} values, got {}",
            costs.len(),
            costs.len() + 1,
            values.len()
        )));
    }
    let t = costs.len();
    let mut adv = vec![0.0; t];
    let mut running = 0.0;
    for k in (0..t).rev() {
        let delta = costs[k] + gamma * values[k + 1] - values[k];
        running = delta + gamma * lambda * running;
        adv[k] = running;
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// λ-weighted max-backup targets for a max-over-time value.
///
/// `next_values[k]` is `V(oᵏ⁺¹)`, so `next_values[T-1]` is the bootstrap.
/// `yᵏ = (1-λ)·max(hᵏ, V(oᵏ⁺¹)) + λ·max(hᵏ, yᵏ⁺¹)` with
/// `yᵀ⁻¹ = max(hᵀ⁻¹, bootstrap)`.
pub fn max_backup_targets(h: &[f64], next_values: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if h.is_empty() {
        return Err(Error::Invalid("max-backup targets of an empty sequence".into()));
    }
    if h.len() != next_values.len() {
        return Err(Error::Invalid("max-backup: length mismatch".into()));
    }
    let t = h.len();
    let mut y = vec![0.0; t];
    y[t - 1] = h[t - 1].max(next_values[t - 1]);
    for k in (0..t - 1).rev() {
        y[k] = (1.0 - lambda) * h[k].max(next_values[k]) + lambda * h[k].max(y[k + 1]);
    }
    Ok(y)
}

/// Discrete CBF residual `V(o⁺) − V(o) + a·V(o)`.
pub fn cbf_residual(v: f64, v_next: f64, slope: f64) -> f64 {
    v_next - v + slope * v
}

/// Single-sample violation estimate `max{0, V(o⁺) − V(o) + a·V(o)}`.
pub fn dcbf_violation(v: f64, v_next: f64, slope: f64) -> f64 {
    cbf_residual(v, v_next, slope).max(0.0)
}

/// Objective advantage when every violation is zero, else `ν·max_m Ĉ`.
pub fn pseudo_advantage(advantage: f64, violations: &[f64], nu: f64) -> f64 {
    let worst = violations.iter().copied().fold(0.0, f64::max);
    if worst > 0.0 {
        nu * worst
    } else {
        advantage
    }
}

/// Clipped surrogate for one sample in the cost convention (minimized).
pub fn ppo_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).max(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// `l + β·max{0, max_m h}`.
pub fn penalty_cost(cost: f64, h: &[f64], beta: f64) -> f64 {
    cost + beta * h.iter().copied().fold(0.0, f64::max)
}

/// Projected dual ascent `max(0, λ + lr·violation)`.
pub fn lagrangian_step(lambda: f64, violation: f64, lr: f64) -> f64 {
    (lambda + lr * violation).max(0.0)
}

/// Multiplier `base`, doubled at `0.5·S` and again at `0.75·S`.
pub fn doubling_schedule(base: f64, step: u64, total: u64) -> f64 {
    let s = step as f64;
    let total = total as f64;
    if s >= 0.75 * total {
        4.0 * base
    } else if s >= 0.5 * total {
        2.0 * base
    } else {
        base
    }
}

/// Constraint-step weight ν.
pub fn nu_schedule(nu0: f64, step: u64, total: u64) -> f64 {
    doubling_schedule(nu0, step, total)
}

/// Penalty weight of the scheduled-penalty baseline (starts at 0.01).
pub fn beta_schedule(step: u64, total: u64) -> f64 {
    doubling_schedule(0.01, step, total)
}

/// Zero-mean unit-variance rescaling of the entries selected by `mask`;
/// other entries are untouched. A constant selection maps to zero.
pub fn standardize_masked(x: &mut [f64], mask: &[bool]) {
    let sel: Vec<f64> = x.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    if sel.is_empty() {
        return;
    }
    let n = sel.len() as f64;
    let mean = sel.iter().sum::<f64>() / n;
    let var = sel.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    for (v, &m) in x.iter_mut().zip(mask) {
        if m {
            *v = (*v - mean) / (std + 1e-8);
        }
    }
}
