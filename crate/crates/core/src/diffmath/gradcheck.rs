//! Central finite-difference verification of reverse-mode gradients.

use super::{grad, ParamSet, ParamVars, Tape, Var};
use crate::error::Result;

/// Settings for [`check_gradients`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Floor on the relative-error denominator so near-zero gradients are
    /// compared on an absolute scale.
    pub denom_floor: f64,
    /// Coordinates probed per tensor (all when the tensor is smaller).
    pub max_coords_per_tensor: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-3,
            denom_floor: 1e-4,
            max_coords_per_tensor: 16,
        }
    }
}

/// Outcome of a finite-difference comparison.
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub skipped_kinks: usize,
}

impl GradCheckReport {
    /// True when the error is within `tol` and at least half of the probed
    /// coordinates were on smooth pieces.
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.skipped_kinks <= self.checked && self.max_rel_err <= tol
    }

    pub fn merge(&mut self, other: GradCheckReport) {
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.skipped_kinks += other.skipped_kinks;
    }
}

/// Value and branch signature of `f` at `params`.
fn eval<F>(params: &ParamSet<f64>, f: &F) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape<f64>, &ParamVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = tape.frozen_params(params);
    let out = f(&mut tape, &vars)?;
    Ok((tape.finish(out)?.item(), tape.branch_signature()))
}

/// Compares analytic gradients of the scalar `f` against central differences.
pub fn check_gradients<F>(params: &ParamSet<f64>, f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamVars) -> Result<Var>,
{
    let (_, analytic) = grad(params, |t, v| f(t, v))?;
    let (_, sig0) = eval(params, &f)?;
    let mut report = GradCheckReport::default();
    let mut work = params.clone();
    for (name, tensor) in params.iter() {
        let n = tensor.numel();
        let stride = n.div_ceil(cfg.max_coords_per_tensor.max(1)).max(1);
        for i in (0..n).step_by(stride) {
            let orig = tensor.data()[i];
            let set = |w: &mut ParamSet<f64>, x: f64| w.get_mut(name).unwrap().data_mut()[i] = x;
            set(&mut work, orig + cfg.step);
            let (fp, sig_p) = eval(&work, &f)?;
            set(&mut work, orig - cfg.step);
            let (fm, sig_m) = eval(&work, &f)?;
            set(&mut work, orig);
            // The stencil straddles a ReLU/max/clamp switch: not differentiable there.
            if sig_p != sig0 || sig_m != sig0 {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * cfg.step);
            let a = analytic.get(name).unwrap().data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.denom_floor);
            report.checked += 1;
            if report.worst.is_none() || rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((name.to_string(), i));
            }
        }
    }
    Ok(report)
}
