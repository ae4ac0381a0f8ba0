//! Brute-force reference computations on small finite instances.
//!
//! Everything here runs in `f64` on explicit enumerations and is kept
//! independent of the network code, so its outputs can anchor tests of the
//! main path.

pub mod suite;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffmath::{grad, Tensor};
use crate::error::{Error, Result};

/// Tolerance for descent-condition checks.
pub const DESCENT_TOL: f64 = 1e-9;

/// Finite MDP with deterministic transitions.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    /// `next[s][a]`.
    pub next: Vec<Vec<usize>>,
    /// Constraint value per state; positive is unsafe.
    pub h: Vec<f64>,
    /// Optional `cost[s][a]`.
    pub cost: Option<Vec<Vec<f64>>>,
    /// States reachable from state 0.
    pub reachable: Vec<bool>,
}

/// Generator settings for [`TabularMdp::random`].
#[derive(Clone, Copy, Debug)]
pub struct MdpGen {
    pub min_states: usize,
    pub max_states: usize,
    pub max_actions: usize,
    /// Probability that a transition is a self-loop.
    pub self_loop: f64,
    /// Probability that a state has `h > 0`.
    pub unsafe_fraction: f64,
}

impl Default for MdpGen {
    fn default() -> Self {
        Self {
            min_states: 2,
            max_states: 24,
            max_actions: 4,
            self_loop: 0.2,
            unsafe_fraction: 0.25,
        }
    }
}

impl TabularMdp {
    pub fn new(next: Vec<Vec<usize>>, h: Vec<f64>, cost: Option<Vec<Vec<f64>>>) -> Result<Self> {
        let n = next.len();
        if n == 0 || n > 64 || h.len() != n {
            return Err(Error::Invalid(format!("tabular MDP needs 1..=64 states, got {n} ({} h values)", h.len())));
        }
        let actions = next[0].len();
        if actions == 0 || actions > 8 {
            return Err(Error::Invalid(format!("tabular MDP needs 1..=8 actions, got {actions}")));
        }
        if next.iter().any(|row| row.len() != actions || row.iter().any(|&t| t >= n)) {
            return Err(Error::Invalid("transition table is not total".into()));
        }
        if let Some(c) = &cost {
            if c.len() != n || c.iter().any(|row| row.len() != actions) {
                return Err(Error::Invalid("cost table shape mismatch".into()));
            }
        }
        let mut reachable = vec![false; n];
        let mut stack = vec![0];
        reachable[0] = true;
        while let Some(s) = stack.pop() {
            for &t in &next[s] {
                if !reachable[t] {
                    reachable[t] = true;
                    stack.push(t);
                }
            }
        }
        Ok(Self {
            next,
            h,
            cost,
            reachable,
        })
    }

    pub fn n_states(&self) -> usize {
        self.next.len()
    }

    pub fn n_actions(&self) -> usize {
        self.next[0].len()
    }

    pub fn random(seed: u64, gen: &MdpGen) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(gen.min_states..=gen.max_states);
        let a = rng.random_range(1..=gen.max_actions);
        let next = (0..n)
            .map(|s| {
                (0..a)
                    .map(|_| if rng.random_bool(gen.self_loop) { s } else { rng.random_range(0..n) })
                    .collect()
            })
            .collect();
        let h = (0..n)
            .map(|_| {
                if rng.random_bool(gen.unsafe_fraction) {
                    rng.random_range(1e-3..1.0)
                } else {
                    rng.random_range(-1.0..0.0)
                }
            })
            .collect();
        let cost = (0..n).map(|_| (0..a).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        Self::new(next, h, Some(cost)).expect("generator produces valid tables")
    }

    /// Successor of `s` under a deterministic policy.
    pub fn step(&self, s: usize, policy: &[usize]) -> usize {
        self.next[s][policy[s]]
    }
}

/// Uniformly random deterministic policy.
pub fn random_policy(mdp: &TabularMdp, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..mdp.n_states()).map(|_| rng.random_range(0..mdp.n_actions())).collect()
}

/// Maximum of `h` along the closed-loop orbit: least fixed point of
/// `V(s) = max(h(s), V(next(s)))`, found by iterating from `V = h`.
pub fn exact_vh(mdp: &TabularMdp, policy: &[usize]) -> Vec<f64> {
    let mut v = mdp.h.clone();
    for _ in 0..=mdp.n_states() {
        let mut changed = false;
        for s in 0..mdp.n_states() {
            let backed = v[s].max(v[mdp.step(s, policy)]);
            if backed != v[s] {
                v[s] = backed;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    v
}

/// States in `{V ≤ 0}` whose violation estimate exceeds [`DESCENT_TOL`].
///
/// `violation(v, v_next, a)` is the per-transition estimate under test.
pub fn check_dcbf_descent_with(
    mdp: &TabularMdp,
    policy: &[usize],
    values: &[f64],
    slope: f64,
    violation: impl Fn(f64, f64, f64) -> f64,
) -> Vec<usize> {
    (0..mdp.n_states())
        .filter(|&s| values[s] <= 0.0 && violation(values[s], values[mdp.step(s, policy)], slope) > DESCENT_TOL)
        .collect()
}

/// [`check_dcbf_descent_with`] using the raw residual `V⁺ − V + a·V`.
pub fn check_dcbf_descent(mdp: &TabularMdp, policy: &[usize], values: &[f64], slope: f64) -> Vec<usize> {
    check_dcbf_descent_with(mdp, policy, values, slope, |v, vn, a| vn - v + a * v)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// `∇θ E_{k∼softmax(θ)}[f(k)]` two ways: reverse-mode differentiation of
/// `Σ p_k f_k`, and the enumerated score-function form `Σ p_k ∇log p_k f_k`.
pub fn exact_score_gradient(logits: &[f64], f: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = logits.len();
    if k == 0 || k > 16 || f.len() != k {
        return Err(Error::Invalid(format!("score gradient needs 1..=16 outcomes, got {k}")));
    }
    let mut params = crate::diffmath::ParamSet::<f64>::new();
    params.insert("logits", Tensor::new(vec![1, k], logits.to_vec())?);
    let fv = Tensor::new(vec![1, k], f.to_vec())?;
    let (_, g) = grad(&params, |t, pv| {
        let p = t.softmax_last(pv.get("logits"));
        let f = t.constant(fv.clone());
        let e = t.mul(p, f);
        Ok(t.sum_all(e))
    })?;
    let direct = g.require("logits")?.data().to_vec();

    let p = softmax(logits);
    let mut score = vec![0.0; k];
    for (o, (&po, &fo)) in p.iter().zip(f).enumerate() {
        // ∇θ log p_o = e_o − p
        for (j, sj) in score.iter_mut().enumerate() {
            let dlog = f64::from(u8::from(j == o)) - p[j];
            *sj += po * dlog * fo;
        }
    }
    Ok((direct, score))
}

/// Tabular softmax policy with logits `Φ_s·θ` for per-state feature maps.
///
/// With `Φ_s` selecting a disjoint block per state the parameters of
/// different states are orthogonal; a shared block couples them.
#[derive(Clone, Debug)]
pub struct TabularPolicy {
    /// `features[s]` is the `[A][P]` map from parameters to logits.
    pub features: Vec<Vec<Vec<f64>>>,
    pub theta: Vec<f64>,
}

impl TabularPolicy {
    /// One independent logit block per state.
    pub fn decoupled(logits: &[Vec<f64>]) -> Self {
        let s = logits.len();
        let a = logits[0].len();
        let p = s * a;
        let features = (0..s)
            .map(|st| {
                (0..a)
                    .map(|ac| {
                        let mut row = vec![0.0; p];
                        row[st * a + ac] = 1.0;
                        row
                    })
                    .collect()
            })
            .collect();
        Self {
            features,
            theta: logits.iter().flatten().copied().collect(),
        }
    }

    /// Every state shares one logit block, plus a fixed per-state offset
    /// folded into a bias parameter block that is also shared.
    pub fn coupled(shared: &[f64], offsets: &[Vec<f64>]) -> Self {
        let a = shared.len();
        let features = offsets
            .iter()
            .map(|off| {
                (0..a)
                    .map(|ac| {
                        let mut row = vec![0.0; 2 * a];
                        row[ac] = 1.0;
                        row[a + ac] = off[ac];
                        row
                    })
                    .collect()
            })
            .collect();
        let mut theta = shared.to_vec();
        theta.extend(std::iter::repeat_n(1.0, a));
        Self { features, theta }
    }

    pub fn n_states(&self) -> usize {
        self.features.len()
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    fn logits(&self, s: usize) -> Vec<f64> {
        self.features[s]
            .iter()
            .map(|row| row.iter().zip(&self.theta).map(|(f, t)| f * t).sum())
            .collect()
    }

    pub fn probs(&self, s: usize) -> Vec<f64> {
        softmax(&self.logits(s))
    }

    /// `∇θ log π(a|s) = Φ_sᵀ (e_a − p)`.
    pub fn grad_log_prob(&self, s: usize, a: usize) -> Vec<f64> {
        let p = self.probs(s);
        let mut g = vec![0.0; self.n_params()];
        for (b, row) in self.features[s].iter().enumerate() {
            let w = f64::from(u8::from(a == b)) - p[b];
            for (gj, fj) in g.iter_mut().zip(row) {
                *gj += w * fj;
            }
        }
        g
    }
}

/// Inputs and results of the gradient-routing check.
#[derive(Clone, Debug)]
pub struct ProjectionReport {
    /// Objective gradient with the per-state safety indicator.
    pub g: Vec<f64>,
    /// One constraint-violation gradient per constraint.
    pub sigma: Vec<Vec<f64>>,
    /// `g · σ⁽ᵐ⁾`.
    pub dots: Vec<f64>,
    /// States where the indicator passed the objective term.
    pub safe_states: usize,
}

/// Enumerates `g = Σ_s ρ(s) 1{max_m C̃⁽ᵐ⁾(s) ≤ 0} Σ_a π(a|s) ∇log π(a|s) Q(s,a)`
/// and `σ⁽ᵐ⁾ = ∇θ Σ_s ρ(s) Σ_a π(a|s) max{0, C⁽ᵐ⁾(s,a)}`.
///
/// `constraint[m][s][a]`, `q[s][a]`, `rho[s]`.
pub fn projection_orthogonality_check(
    policy: &TabularPolicy,
    rho: &[f64],
    constraint: &[Vec<Vec<f64>>],
    q: &[Vec<f64>],
) -> Result<ProjectionReport> {
    let s_count = policy.n_states();
    if rho.len() != s_count || q.len() != s_count || constraint.iter().any(|c| c.len() != s_count) {
        return Err(Error::Invalid("projection check: state count mismatch".into()));
    }
    let p_count = policy.n_params();
    let mut g = vec![0.0; p_count];
    let mut sigma = vec![vec![0.0; p_count]; constraint.len()];
    let mut safe_states = 0;
    for s in 0..s_count {
        let pi = policy.probs(s);
        let expected_violation = |m: usize| -> f64 { pi.iter().zip(&constraint[m][s]).map(|(p, c)| p * c.max(0.0)).sum() };
        let safe = (0..constraint.len()).all(|m| expected_violation(m) <= 0.0);
        safe_states += usize::from(safe);
        for (a, &pa) in pi.iter().enumerate() {
            let score = policy.grad_log_prob(s, a);
            if safe {
                let w = rho[s] * pa * q[s][a];
                g.iter_mut().zip(&score).for_each(|(gj, sj)| *gj += w * sj);
            }
            for (m, sig) in sigma.iter_mut().enumerate() {
                let w = rho[s] * pa * constraint[m][s][a].max(0.0);
                sig.iter_mut().zip(&score).for_each(|(gj, sj)| *gj += w * sj);
            }
        }
    }
    let dots = sigma.iter().map(|sig| sig.iter().zip(&g).map(|(a, b)| a * b).sum()).collect();
    Ok(ProjectionReport {
        g,
        sigma,
        dots,
        safe_states,
    })
}

/// Result of checking that `B(x) = max_i B̃_i(x)` inherits the descent
/// condition from the per-agent functions.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxConstructionReport {
    /// Per agent: states in that agent's sublevel set violating its own descent.
    pub agent_violations: Vec<Vec<usize>>,
    /// Joint states in `{B ≤ 0}` violating `B(x⁺) − B(x) + a·B(x) ≤ 0`.
    pub joint_violations: Vec<usize>,
}

impl MaxConstructionReport {
    pub fn per_agent_holds(&self) -> bool {
        self.agent_violations.iter().all(Vec::is_empty)
    }

    pub fn joint_holds(&self) -> bool {
        self.joint_violations.is_empty()
    }
}

/// `values[i][x]` is agent `i`'s function at joint state `x`; `next[x]` the
/// closed-loop successor.
pub fn max_construction_check(values: &[Vec<f64>], next: &[usize], slope: f64) -> Result<MaxConstructionReport> {
    if values.is_empty() || values.iter().any(|v| v.len() != next.len()) || next.iter().any(|&t| t >= next.len()) {
        return Err(Error::Invalid("max construction: shape mismatch".into()));
    }
    let descent = |v: &[f64]| -> Vec<usize> {
        (0..next.len())
            .filter(|&x| v[x] <= 0.0 && v[next[x]] - v[x] + slope * v[x] > DESCENT_TOL)
            .collect()
    };
    let joint: Vec<f64> = (0..next.len())
        .map(|x| values.iter().map(|v| v[x]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(MaxConstructionReport {
        agent_violations: values.iter().map(|v| descent(v)).collect(),
        joint_violations: descent(&joint),
    })
}

/// Expected positive part of a finitely supported `C` and whether every
/// support point is non-positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlmostSureReport {
    pub expected_violation: f64,
    pub all_nonpositive: bool,
}

impl AlmostSureReport {
    /// `E[max{0, C}] ≤ 0 ⇔ C ≤ 0` on the support.
    pub fn equivalent(&self) -> bool {
        (self.expected_violation <= 0.0) == self.all_nonpositive
    }
}

pub fn almost_sure_check(probs: &[f64], values: &[f64]) -> Result<AlmostSureReport> {
    if probs.len() != values.len() || probs.is_empty() {
        return Err(Error::Invalid("almost-sure check: support mismatch".into()));
    }
    if probs.iter().any(|&p| p <= 0.0) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid("almost-sure check: probabilities must be positive and sum to 1".into()));
    }
    Ok(AlmostSureReport {
        expected_violation: probs.iter().zip(values).map(|(p, c)| p * c.max(0.0)).sum(),
        all_nonpositive: values.iter().all(|&c| c <= 0.0),
    })
}
