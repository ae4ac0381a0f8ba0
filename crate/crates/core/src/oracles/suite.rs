//! The full oracle battery behind `dgppo verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::*;
use crate::diffmath::{check_gradients, GradCheckConfig, GradCheckReport, ParamSet};
use crate::env::{Env, EnvKind, EnvSpec, ObsGraph};
use crate::gnn::{gaussian_log_prob, ConstraintValueNet, CostValueNet, GraphBatch, NetConfig, PolicyNet, Pooling};
use crate::learner::{
    constraint_value_loss, cost_value_loss, dcbf_violation, policy_log_probs, policy_loss, PolicyMinibatch, PolicyStep,
};
use crate::rollout::derive_seed;

/// Random tabular MDPs for the descent check.
pub const DESCENT_MDPS: usize = 100;
/// Slopes of the linear class-κ function exercised by the descent check.
pub const DESCENT_SLOPES: [f64; 3] = [0.0, 0.3, 0.9];
pub const ALMOST_SURE_INSTANCES: usize = 100;
pub const SCORE_INSTANCES: usize = 50;
pub const SCORE_TOL: f64 = 1e-10;
pub const PROJECTION_DECOUPLED: usize = 20;
pub const PROJECTION_COUPLED: usize = 5;
pub const PROJECTION_TOL: f64 = 1e-6;
pub const COUPLED_MIN_DOT: f64 = 1e-3;
pub const MAX_CONSTRUCTION_INSTANCES: usize = 20;
/// Seeds per network block in the gradient section.
pub const GRADIENT_SEEDS: u64 = 10;
pub const GRADIENT_TOL: f64 = 1e-3;

/// Per-transition violation estimate `(V(o), V(o⁺), a) ↦ Ĉ`.
pub type ViolationFn = fn(f64, f64, f64) -> f64;

/// Suite settings.
#[derive(Clone, Copy, Debug)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Estimator exercised by the descent check.
    pub violation: ViolationFn,
    /// Also run the finite-difference checks of every network block.
    pub gradients: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            violation: dcbf_violation,
            gradients: true,
        }
    }
}

/// Outcome of one property.
#[derive(Clone, Debug, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub instances: usize,
    pub minimum_instances: usize,
    pub passed: bool,
    /// Largest error or violation observed (property-specific scale).
    pub worst: f64,
    /// First failing instance, with the seed that regenerates it.
    pub failure: Option<String>,
}

/// All properties, in execution order.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub passed: bool,
    pub results: Vec<PropertyResult>,
}

impl SuiteReport {
    pub fn first_failure(&self) -> Option<&PropertyResult> {
        self.results.iter().find(|r| !r.passed)
    }
}

struct Tally {
    name: &'static str,
    minimum: usize,
    instances: usize,
    worst: f64,
    failure: Option<String>,
}

impl Tally {
    fn new(name: &'static str, minimum: usize) -> Self {
        Self {
            name,
            minimum,
            instances: 0,
            worst: 0.0,
            failure: None,
        }
    }

    fn record(&mut self, ok: bool, err: f64, detail: impl FnOnce() -> String) {
        self.instances += 1;
        self.worst = self.worst.max(err);
        if !ok && self.failure.is_none() {
            self.failure = Some(detail());
        }
    }

    fn finish(self) -> PropertyResult {
        PropertyResult {
            name: self.name,
            instances: self.instances,
            minimum_instances: self.minimum,
            passed: self.failure.is_none() && self.instances >= self.minimum,
            worst: self.worst,
            failure: self.failure,
        }
    }
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let mut results = vec![
        descent(cfg),
        almost_sure(cfg)?,
        score_gradient(cfg)?,
    ];
    results.extend(projection(cfg)?);
    results.push(max_construction(cfg)?);
    if cfg.gradients {
        results.extend(gradient_checks(cfg)?);
    }
    Ok(SuiteReport {
        passed: results.iter().all(|r| r.passed),
        results,
    })
}

fn descent(cfg: &SuiteConfig) -> PropertyResult {
    let mut t = Tally::new("dcbf_descent_of_constraint_value", DESCENT_MDPS * DESCENT_SLOPES.len());
    let gen = MdpGen::default();
    for i in 0..DESCENT_MDPS as u64 {
        let seed = derive_seed(cfg.seed, &[1, i]);
        let mdp = TabularMdp::random(seed, &gen);
        let policy = random_policy(&mdp, seed ^ 1);
        let v = exact_vh(&mdp, &policy);
        let fixed_point = (0..mdp.n_states()).all(|s| v[s] == mdp.h[s].max(v[mdp.step(s, &policy)]));
        for &a in &DESCENT_SLOPES {
            let bad = check_dcbf_descent_with(&mdp, &policy, &v, a, cfg.violation);
            let worst = bad
                .iter()
                .map(|&s| (cfg.violation)(v[s], v[mdp.step(s, &policy)], a))
                .fold(0.0, f64::max);
            t.record(fixed_point && bad.is_empty(), worst, || {
                format!("mdp seed {seed}, a = {a}: {} violating states, first {:?}", bad.len(), bad.first())
            });
        }
    }
    t.finish()
}

fn almost_sure(cfg: &SuiteConfig) -> Result<PropertyResult> {
    let mut t = Tally::new("almost_sure_equivalence", ALMOST_SURE_INSTANCES);
    for i in 0..ALMOST_SURE_INSTANCES as u64 {
        let seed = derive_seed(cfg.seed, &[2, i]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(1..=8);
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let z: f64 = w.iter().sum();
        let probs: Vec<f64> = w.iter().map(|x| x / z).collect();
        // Half the instances are feasible by construction; a few sit on the boundary.
        let feasible = i % 2 == 0;
        let values: Vec<f64> = (0..k)
            .map(|_| match (feasible, rng.random_range(0..4)) {
                (_, 0) => 0.0,
                (true, _) => rng.random_range(-2.0..0.0),
                (false, _) => rng.random_range(-2.0..2.0),
            })
            .collect();
        let r = almost_sure_check(&probs, &values)?;
        t.record(r.equivalent(), r.expected_violation, || format!("distribution seed {seed}: {r:?}"));
    }
    Ok(t.finish())
}

fn score_gradient(cfg: &SuiteConfig) -> Result<PropertyResult> {
    let mut t = Tally::new("score_function_gradient", SCORE_INSTANCES);
    for i in 0..SCORE_INSTANCES as u64 {
        let seed = derive_seed(cfg.seed, &[3, i]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(2..=16);
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let f: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
        let (direct, score) = exact_score_gradient(&logits, &f)?;
        let err = direct.iter().zip(&score).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        t.record(err <= SCORE_TOL, err, || format!("instance seed {seed}: max difference {err:e}"));
    }
    Ok(t.finish())
}

struct ProjectionInstance {
    rho: Vec<f64>,
    constraint: Vec<Vec<Vec<f64>>>,
    q: Vec<Vec<f64>>,
    logits: Vec<Vec<f64>>,
}

/// Random instance with at least one state that violates and one that does not.
fn projection_instance(seed: u64) -> ProjectionInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = rng.random_range(3..=10);
    let a = rng.random_range(2..=5);
    let m = rng.random_range(1..=3);
    let w: Vec<f64> = (0..s).map(|_| rng.random_range(0.1..1.0)).collect();
    let z: f64 = w.iter().sum();
    let violating: Vec<bool> = (0..s).map(|st| st == 0 || (st != 1 && rng.random_bool(0.4))).collect();
    let constraint = (0..m)
        .map(|_| {
            (0..s)
                .map(|st| {
                    (0..a)
                        .map(|_| {
                            if violating[st] {
                                rng.random_range(-1.0..1.0)
                            } else {
                                rng.random_range(-1.0..-0.01)
                            }
                        })
                        .collect::<Vec<f64>>()
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>();
    // Guarantee the violating states really violate for some constraint and action.
    let mut constraint = constraint;
    for (st, &v) in violating.iter().enumerate() {
        if v {
            constraint[0][st][0] = rng.random_range(0.1..1.0);
        }
    }
    ProjectionInstance {
        rho: w.iter().map(|x| x / z).collect(),
        constraint,
        q: (0..s).map(|_| (0..a).map(|_| rng.random_range(-2.0..2.0)).collect()).collect(),
        logits: (0..s).map(|_| (0..a).map(|_| rng.random_range(-1.5..1.5)).collect()).collect(),
    }
}

fn projection(cfg: &SuiteConfig) -> Result<Vec<PropertyResult>> {
    let mut dec = Tally::new("gradient_projection_decoupled", PROJECTION_DECOUPLED);
    for i in 0..PROJECTION_DECOUPLED as u64 {
        let seed = derive_seed(cfg.seed, &[4, i]);
        let inst = projection_instance(seed);
        let policy = TabularPolicy::decoupled(&inst.logits);
        let r = projection_orthogonality_check(&policy, &inst.rho, &inst.constraint, &inst.q)?;
        let worst = r.dots.iter().map(|d| d.abs()).fold(0.0, f64::max);
        let mixed = r.safe_states > 0 && r.safe_states < policy.n_states();
        dec.record(worst <= PROJECTION_TOL && mixed, worst, || {
            format!("instance seed {seed}: |g·σ| = {worst:e}, {} safe states", r.safe_states)
        });
    }
    let mut cpl = Tally::new("gradient_projection_coupled_counterexample", PROJECTION_COUPLED);
    for i in 0..PROJECTION_COUPLED as u64 {
        let seed = derive_seed(cfg.seed, &[5, i]);
        let mut inst = projection_instance(seed);
        // Objective and constraint both single out action 0, so a shared
        // parameter block must carry overlapping gradient directions.
        for (st, row) in inst.q.iter_mut().enumerate() {
            for (a, q) in row.iter_mut().enumerate() {
                *q = if a == 0 { -5.0 } else { 5.0 } * (1.0 + 0.1 * st as f64);
            }
        }
        for c in inst.constraint.iter_mut() {
            for row in c.iter_mut() {
                if row[0] > 0.0 {
                    row[0] = row[0].max(0.5);
                }
                row.iter_mut().skip(1).for_each(|x| *x = -x.abs() - 0.01);
            }
        }
        let offsets: Vec<Vec<f64>> = inst.logits.iter().map(|r| r.iter().map(|x| 0.3 * x).collect()).collect();
        let policy = TabularPolicy::coupled(&vec![0.0; offsets[0].len()], &offsets);
        let r = projection_orthogonality_check(&policy, &inst.rho, &inst.constraint, &inst.q)?;
        let largest = r.dots.iter().map(|d| d.abs()).fold(0.0, f64::max);
        cpl.record(largest > COUPLED_MIN_DOT, largest, || {
            format!("instance seed {seed}: coupled policy gave max |g·σ| = {largest:e}")
        });
    }
    Ok(vec![dec.finish(), cpl.finish()])
}

fn max_construction(cfg: &SuiteConfig) -> Result<PropertyResult> {
    let mut t = Tally::new("max_over_agents_construction", MAX_CONSTRUCTION_INSTANCES);
    for i in 0..MAX_CONSTRUCTION_INSTANCES as u64 {
        let seed = derive_seed(cfg.seed, &[6, i]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agents = rng.random_range(2..=4);
        let states = rng.random_range(4..=32);
        let next: Vec<usize> = (0..states).map(|_| rng.random_range(0..states)).collect();
        let a = DESCENT_SLOPES[(i % 3) as usize];
        // Per-agent functions: exact constraint values of per-agent h on the joint closed loop.
        let values: Vec<Vec<f64>> = (0..agents)
            .map(|_| {
                let h = (0..states)
                    .map(|_| if rng.random_bool(0.2) { rng.random_range(0.01..1.0) } else { rng.random_range(-1.0..0.0) })
                    .collect();
                let mdp = TabularMdp::new(next.iter().map(|&n| vec![n]).collect(), h, None).expect("valid table");
                exact_vh(&mdp, &vec![0; states])
            })
            .collect();
        let r = max_construction_check(&values, &next, a)?;
        t.record(r.per_agent_holds() && r.joint_holds(), r.joint_violations.len() as f64, || {
            format!("scene seed {seed}: {r:?}")
        });
    }
    Ok(t.finish())
}

fn crowded_scene(seed: u64) -> Result<Vec<ObsGraph>> {
    let env = Env::new(EnvSpec::new(EnvKind::Spread, 3).with_arena_side(0.6).with_obstacles(1))?;
    let s = env.reset(seed)?;
    let s = env.step(&s, &[[0.4, -0.3], [-0.2, 0.6], [0.1, 0.1]])?;
    Ok(env.observe_all(&s))
}

fn gradient_result(name: &'static str, reports: Vec<(u64, GradCheckReport)>) -> PropertyResult {
    let mut t = Tally::new(name, GRADIENT_SEEDS as usize);
    for (seed, r) in reports {
        t.record(r.passes(GRADIENT_TOL), r.max_rel_err, || format!("parameter seed {seed}: {r:?}"));
    }
    t.finish()
}

/// Finite-difference checks of every network block and both losses.
pub fn gradient_checks(cfg: &SuiteConfig) -> Result<Vec<PropertyResult>> {
    let net = NetConfig::default();
    let policy = PolicyNet::new(net.clone(), 2);
    let cost = CostValueNet::new(net.clone());
    let cons = ConstraintValueNet::new(net, 2);
    let fd = GradCheckConfig::default();
    let mut log_prob = Vec::new();
    let mut cost_block = Vec::new();
    let mut cons_block = Vec::new();
    let mut pol_loss = Vec::new();
    let mut value_losses = Vec::new();
    let mut recurrent = Vec::new();
    let gru_policy = PolicyNet::new(
        NetConfig {
            gru: true,
            ..NetConfig::default()
        },
        2,
    );
    for k in 0..GRADIENT_SEEDS {
        let seed = derive_seed(cfg.seed, &[7, k]);
        let graphs = crowded_scene(seed)?;
        let batch: GraphBatch<f64> = GraphBatch::new(&graphs, 0.5, 3);
        let actions = Tensor::new(vec![3, 2], vec![0.2, -0.1, 0.5, 0.4, -0.9, 0.05])?;

        let mut p: ParamSet<f64> = policy.init(seed);
        p.get_mut("log_std").expect("policy has log_std").data_mut().copy_from_slice(&[-0.3, 0.2]);
        let r = check_gradients(
            &p,
            |t, pv| {
                let (mean, ls, _) = policy.forward(t, pv, &batch, None);
                let a = t.constant(actions.clone());
                let lp = gaussian_log_prob(t, mean, ls, a);
                Ok(t.sum_all(lp))
            },
            &fd,
        )?;
        log_prob.push((seed, r));

        let pg: ParamSet<f64> = gru_policy.init(seed);
        let r = check_gradients(
            &pg,
            |t, pv| {
                let (m1, _, h) = gru_policy.forward(t, pv, &batch, None);
                let (m2, _, _) = gru_policy.forward(t, pv, &batch, h);
                let s = t.add(m1, m2);
                let s = t.square(s);
                Ok(t.sum_all(s))
            },
            &fd,
        )?;
        recurrent.push((seed, r));

        let mut mb = PolicyMinibatch {
            steps: vec![PolicyStep {
                batch: batch.clone(),
                actions: actions.clone(),
                old_log_prob: vec![0.0; 3],
                advantage: vec![0.8, -1.1, 0.4],
            }],
            initial_hidden: None,
        };
        let mut tape = crate::diffmath::Tape::new();
        let pv = tape.frozen_params(&p);
        let (lp, _) = policy_log_probs(&mut tape, &pv, &policy, &mb);
        let lp = tape.value(lp[0]).data().to_vec();
        mb.steps[0].old_log_prob = vec![lp[0] - 0.1, lp[1] + 0.5, lp[2] + 0.02];
        let r = check_gradients(&p, |t, pv| Ok(policy_loss(t, pv, &policy, &mb, 0.25, 0.01)?.0), &fd)?;
        pol_loss.push((seed, r));

        let pc: ParamSet<f64> = cost.init(seed);
        let pool = Pooling::uniform(1, 3);
        let r = check_gradients(
            &pc,
            |t, pv| {
                let v = cost.forward(t, pv, &batch, &pool);
                Ok(t.sum_all(v))
            },
            &fd,
        )?;
        cost_block.push((seed, r));
        let mut r = check_gradients(&pc, |t, pv| cost_value_loss(t, pv, &cost, &batch, &pool, &[0.3]), &fd)?;

        let ph: ParamSet<f64> = cons.init(seed);
        let rc = check_gradients(
            &ph,
            |t, pv| {
                let v = cons.forward(t, pv, &batch);
                let v = t.square(v);
                Ok(t.sum_all(v))
            },
            &fd,
        )?;
        cons_block.push((seed, rc));
        let targets = [0.1, -0.4, 0.5, -0.3, -0.2, 0.05];
        r.merge(check_gradients(&ph, |t, pv| constraint_value_loss(t, pv, &cons, &batch, &targets), &fd)?);
        value_losses.push((seed, r));
    }
    Ok(vec![
        gradient_result("gradient_policy_log_prob", log_prob),
        gradient_result("gradient_cost_value_net", cost_block),
        gradient_result("gradient_constraint_value_net", cons_block),
        gradient_result("gradient_policy_loss", pol_loss),
        gradient_result("gradient_value_losses", value_losses),
        gradient_result("gradient_recurrent_policy", recurrent),
    ])
}

