use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{AlgoConfig, Mode, VhBootstrap, VhRollout};
use super::losses::{constraint_value_loss, cost_value_loss, policy_log_probs, policy_loss, PolicyMinibatch, PolicyStep};
use super::targets::{
    beta_schedule, cbf_residual, gae, lagrangian_step, max_backup_targets, nu_schedule, pseudo_advantage,
    standardize_masked,
};
use crate::diffmath::{adam_step, clip_grad_norm, grad, AdamConfig, AdamState, ParamSet, Tape, Tensor};
use crate::env::{Env, N_CONSTRAINTS};
use crate::error::{Error, Result};
use crate::gnn::{ConstraintValueNet, CostValueNet, GraphBatch, NetConfig, PolicyNet, Pooling};
use crate::rollout::{collect, derive_seed, Episode, RolloutBatch, RolloutConfig, RolloutKind};

const INIT: u64 = 0x494e_4954;
const ROLLOUT: u64 = 0x524f_4c4c;
const SHUFFLE: u64 = 0x5348_5546;
/// Graphs per forward pass when evaluating values over a whole batch.
const EVAL_CHUNK: usize = 2048;

/// Everything that changes during training; checkpoints persist exactly this.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    /// Completed updates.
    pub step: u64,
    pub policy: ParamSet,
    pub cost_value: ParamSet,
    pub constraint_value: ParamSet,
    pub policy_adam: AdamState,
    pub cost_value_adam: AdamState,
    pub constraint_value_adam: AdamState,
    /// Lagrange multipliers (used by the Lagrangian baseline only).
    pub lambda: [f64; N_CONSTRAINTS],
}

/// Per-update summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub step: u64,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub safety_rate: f64,
    pub nu: f64,
    pub beta: f64,
    pub lambda: Vec<f64>,
    pub loss_policy: f64,
    pub loss_vl: f64,
    pub loss_vh: f64,
    /// Fraction of agent-transitions routed to the constraint branch.
    pub frac_violating: f64,
    /// Mean over agent-transitions of `max_m Ĉ`.
    pub mean_violation: f64,
}

/// Deterministic-policy evaluation summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub n_agents: usize,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub safety_rate: f64,
}

/// Runs the policy mean over `episodes` instances and summarizes them.
pub fn evaluate(env: &Env, policy: &PolicyNet, params: &ParamSet, episodes: usize, seed: u64) -> Result<EvalSummary> {
    let batch = collect(
        env,
        policy,
        params,
        &RolloutConfig {
            n_envs: episodes,
            horizon: env.spec().horizon,
            seed,
            kind: RolloutKind::Deterministic,
            workers: None,
        },
    )?;
    Ok(summarize(&batch))
}

pub fn summarize(batch: &RolloutBatch) -> EvalSummary {
    let (cost_mean, cost_std) = batch.cost_stats();
    EvalSummary {
        episodes: batch.episodes.len(),
        n_agents: batch.episodes.first().map_or(0, Episode::n_agents),
        cost_mean,
        cost_std,
        safety_rate: batch.safety_rate(),
    }
}

/// The three networks of the method.
#[derive(Clone, Debug)]
pub struct Nets {
    pub policy: PolicyNet,
    pub cost_value: CostValueNet,
    pub constraint_value: ConstraintValueNet,
}

impl Nets {
    pub fn new(cfg: &NetConfig) -> Self {
        Self {
            policy: PolicyNet::new(cfg.clone(), 2),
            cost_value: CostValueNet::new(cfg.clone()),
            constraint_value: ConstraintValueNet::new(cfg.clone(), N_CONSTRAINTS),
        }
    }
}

/// Full training loop state plus the fixed configuration it runs under.
#[derive(Clone, Debug)]
pub struct Trainer {
    env: Env,
    algo: AlgoConfig,
    nets: Nets,
    seed: u64,
    total_updates: u64,
    workers: Option<usize>,
    pub state: TrainState,
}

/// Per-(episode, step, agent) quantities of the stochastic batch.
pub(super) struct Prepared {
    /// `[E][T]` pseudo-advantage rows of length `N`.
    pub(super) advantage: Vec<Vec<Vec<f64>>>,
    /// `[E][T]` cost-value regression targets.
    pub(super) cost_targets: Vec<Vec<f64>>,
    pub(super) frac_violating: f64,
    pub(super) mean_violation: f64,
    /// Mean `max{0, h⁽ᵐ⁾}` over next states, per constraint.
    pub(super) mean_h_violation: [f64; N_CONSTRAINTS],
}

impl Trainer {
    pub fn new(env: Env, net: NetConfig, algo: AlgoConfig, seed: u64, total_updates: u64) -> Result<Self> {
        net.validate()?;
        algo.validate()?;
        let env = match algo.horizon {
            Some(h) => Env::new(env.spec().clone().with_horizon(h))?,
            None => env,
        };
        if net.gru && env.spec().horizon % net.gru_chunk != 0 {
            return Err(Error::Config(format!(
                "horizon {} is not a multiple of gru_chunk {}",
                env.spec().horizon,
                net.gru_chunk
            )));
        }
        let nets = Nets::new(&net);
        let policy = nets.policy.init(derive_seed(seed, &[INIT, 0]));
        let cost_value = nets.cost_value.init(derive_seed(seed, &[INIT, 1]));
        let constraint_value = nets.constraint_value.init(derive_seed(seed, &[INIT, 2]));
        let state = TrainState {
            step: 0,
            policy_adam: AdamState::new(&policy),
            cost_value_adam: AdamState::new(&cost_value),
            constraint_value_adam: AdamState::new(&constraint_value),
            policy,
            cost_value,
            constraint_value,
            lambda: match algo.mode {
                Mode::Lagrangian { init, .. } => [init; N_CONSTRAINTS],
                _ => [0.0; N_CONSTRAINTS],
            },
        };
        Ok(Self {
            env,
            algo,
            nets,
            seed,
            total_updates,
            workers: None,
            state,
        })
    }

    /// Pins the rollout worker count instead of consulting `THREADS`.
    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers.max(1));
        self
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn algo(&self) -> &AlgoConfig {
        &self.algo
    }

    pub fn nets(&self) -> &Nets {
        &self.nets
    }

    pub fn total_updates(&self) -> u64 {
        self.total_updates
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.total_updates
    }

    /// Constraint-step weight at the current step.
    pub fn nu(&self) -> f64 {
        nu_schedule(self.algo.nu, self.state.step, self.total_updates)
    }

    /// Penalty weight at the current step (zero outside penalty modes).
    pub fn beta(&self) -> f64 {
        match self.algo.mode {
            Mode::Penalty { beta } => beta,
            Mode::PenaltySchedule => beta_schedule(self.state.step, self.total_updates),
            _ => 0.0,
        }
    }

    pub fn evaluate(&self, episodes: usize, seed: u64) -> Result<EvalSummary> {
        evaluate(&self.env, &self.nets.policy, &self.state.policy, episodes, seed)
    }

    pub(super) fn rollout(&self, kind: RolloutKind) -> Result<RolloutBatch> {
        collect(
            &self.env,
            &self.nets.policy,
            &self.state.policy,
            &RolloutConfig {
                n_envs: self.algo.n_envs,
                horizon: self.env.spec().horizon,
                seed: derive_seed(self.seed, &[ROLLOUT, self.state.step]),
                kind,
                workers: self.workers,
            },
        )
    }

    fn heads(&self) -> usize {
        self.nets.policy.cfg.heads
    }

    fn graph_batch(&self, graphs: &[&crate::env::ObsGraph]) -> GraphBatch {
        GraphBatch::new(graphs.iter().copied(), self.env.spec().sensing_radius, self.heads())
    }

    /// Cost values at every joint state, `[E][T + 1]`.
    fn cost_values(&self, batch: &RolloutBatch) -> Result<Vec<Vec<f64>>> {
        let n = self.env.spec().n_agents;
        let per_chunk = (EVAL_CHUNK / n).max(1);
        let mut out = Vec::with_capacity(batch.episodes.len());
        for ep in &batch.episodes {
            let mut values = Vec::with_capacity(ep.graphs.len());
            for states in ep.graphs.chunks(per_chunk) {
                let graphs: Vec<_> = states.iter().flatten().collect();
                let pool = Pooling::uniform(states.len(), n);
                let v = self.nets.cost_value.eval(&self.state.cost_value, &self.graph_batch(&graphs), &pool)?;
                values.extend(v.data().iter().map(|&x| x as f64));
            }
            out.push(values);
        }
        Ok(out)
    }

    /// Constraint values `[E][T + 1][N][M]`: learned, or `h` itself for the
    /// handcrafted ablation.
    fn constraint_values(&self, batch: &RolloutBatch) -> Result<Vec<Vec<Vec<[f64; N_CONSTRAINTS]>>>> {
        if self.algo.mode == Mode::HandcraftedCbf {
            return Ok(batch.episodes.iter().map(|ep| ep.h.clone()).collect());
        }
        let n = self.env.spec().n_agents;
        let per_chunk = (EVAL_CHUNK / n).max(1);
        let mut out = Vec::with_capacity(batch.episodes.len());
        for ep in &batch.episodes {
            let mut values = Vec::with_capacity(ep.graphs.len());
            for states in ep.graphs.chunks(per_chunk) {
                let graphs: Vec<_> = states.iter().flatten().collect();
                let v = self.nets.constraint_value.eval(&self.state.constraint_value, &self.graph_batch(&graphs))?;
                for s in 0..states.len() {
                    values.push(
                        (0..n)
                            .map(|i| {
                                let row = v.row(s * n + i);
                                std::array::from_fn(|m| row[m] as f64)
                            })
                            .collect(),
                    );
                }
            }
            out.push(values);
        }
        Ok(out)
    }

    pub(super) fn prepare(&self, batch: &RolloutBatch, nu: f64, beta: f64) -> Result<Prepared> {
        let mode = self.algo.mode;
        let slope = self.algo.cbf_slope;
        let n = self.env.spec().n_agents;
        let values = self.cost_values(batch)?;
        let mut mean_h_violation = [0.0; N_CONSTRAINTS];
        let mut count = 0usize;
        for ep in &batch.episodes {
            for hk in &ep.h[1..] {
                for hi in hk {
                    for m in 0..N_CONSTRAINTS {
                        mean_h_violation[m] += hi[m].max(0.0);
                    }
                    count += 1;
                }
            }
        }
        mean_h_violation.iter_mut().for_each(|v| *v /= count.max(1) as f64);

        // Shaped costs for the penalty-style baselines, then GAE per episode.
        let mut gae_adv = Vec::with_capacity(batch.episodes.len());
        let mut cost_targets = Vec::with_capacity(batch.episodes.len());
        for (ep, v) in batch.episodes.iter().zip(&values) {
            let costs: Vec<f64> = (0..ep.horizon())
                .map(|k| {
                    let next = &ep.h[k + 1];
                    let mean_pos = |m: usize| next.iter().map(|h| h[m].max(0.0)).sum::<f64>() / n as f64;
                    match mode {
                        Mode::Penalty { .. } | Mode::PenaltySchedule => {
                            let worst = next.iter().map(|h| h.iter().copied().fold(0.0, f64::max)).sum::<f64>();
                            ep.costs[k] + beta * worst / n as f64
                        }
                        Mode::Lagrangian { .. } => {
                            ep.costs[k] + (0..N_CONSTRAINTS).map(|m| self.state.lambda[m] * mean_pos(m)).sum::<f64>()
                        }
                        _ => ep.costs[k],
                    }
                })
                .collect();
            let (adv, targets) = gae(&costs, v, self.algo.gamma, self.algo.gae_lambda)?;
            gae_adv.push(adv);
            cost_targets.push(targets);
        }

        // Per agent-transition constraint estimates: Ĉ (clamped) and raw residual C.
        let (clamped, raw): (Vec<Vec<Vec<[f64; N_CONSTRAINTS]>>>, Vec<Vec<Vec<[f64; N_CONSTRAINTS]>>>) =
            if mode.uses_violation_branch() {
                let vh = if mode == Mode::NoCbf { None } else { Some(self.constraint_values(batch)?) };
                let mut clamped = Vec::new();
                let mut raw = Vec::new();
                for (e, ep) in batch.episodes.iter().enumerate() {
                    let mut ce = Vec::with_capacity(ep.horizon());
                    let mut re = Vec::with_capacity(ep.horizon());
                    for k in 0..ep.horizon() {
                        let mut ck = Vec::with_capacity(n);
                        let mut rk = Vec::with_capacity(n);
                        for i in 0..n {
                            let r: [f64; N_CONSTRAINTS] = match &vh {
                                Some(vh) => std::array::from_fn(|m| cbf_residual(vh[e][k][i][m], vh[e][k + 1][i][m], slope)),
                                None => ep.h[k + 1][i],
                            };
                            ck.push(r.map(|x| x.max(0.0)));
                            rk.push(r);
                        }
                        ce.push(ck);
                        re.push(rk);
                    }
                    clamped.push(ce);
                    raw.push(re);
                }
                (clamped, raw)
            } else {
                (Vec::new(), Vec::new())
            };

        let worst = |c: &[f64; N_CONSTRAINTS]| c.iter().copied().fold(0.0, f64::max);
        let mut flat_adv = Vec::new();
        let mut safe_mask = Vec::new();
        let mut violating = 0usize;
        let mut violation_sum = 0.0;
        let mut total = 0usize;
        for (e, ep) in batch.episodes.iter().enumerate() {
            for k in 0..ep.horizon() {
                for i in 0..n {
                    flat_adv.push(gae_adv[e][k]);
                    let (viol, safe) = if mode.uses_violation_branch() {
                        let w = worst(&clamped[e][k][i]);
                        (w, w <= 0.0)
                    } else {
                        (worst(&ep.h[k + 1][i]), true)
                    };
                    safe_mask.push(safe);
                    violating += usize::from(viol > 0.0);
                    violation_sum += viol;
                    total += 1;
                }
            }
        }
        let batch_mean_violation = violation_sum / total.max(1) as f64;

        // Coupled baselines gate the whole batch at once.
        let coupled_c = if mode == Mode::CrpoCoupledC {
            let mut means = [0.0; N_CONSTRAINTS];
            for r in raw.iter().flatten().flatten() {
                for m in 0..N_CONSTRAINTS {
                    means[m] += r[m] / total as f64;
                }
            }
            let (m_star, &mean) = means
                .iter()
                .enumerate()
                .fold((0, &f64::NEG_INFINITY), |acc, x| if *x.1 > *acc.1 { x } else { acc });
            (mean > 0.0).then_some(m_star)
        } else {
            None
        };
        let coupled_gate = match mode {
            Mode::CrpoCoupledMaxC => batch_mean_violation > 0.0,
            Mode::CrpoCoupledC => coupled_c.is_some(),
            _ => false,
        };
        if matches!(mode, Mode::CrpoCoupledMaxC | Mode::CrpoCoupledC) {
            safe_mask.iter_mut().for_each(|s| *s = !coupled_gate);
        }
        standardize_masked(&mut flat_adv, &safe_mask);

        let mut advantage = Vec::with_capacity(batch.episodes.len());
        let mut idx = 0;
        for (e, ep) in batch.episodes.iter().enumerate() {
            let mut rows = Vec::with_capacity(ep.horizon());
            for k in 0..ep.horizon() {
                let row = (0..n)
                    .map(|i| {
                        let a = flat_adv[idx + i];
                        match mode {
                            Mode::Dgppo | Mode::NoCbf | Mode::HandcraftedCbf => pseudo_advantage(a, &clamped[e][k][i], nu),
                            Mode::CrpoCoupledMaxC if coupled_gate => nu * worst(&clamped[e][k][i]),
                            Mode::CrpoCoupledC if coupled_gate => nu * raw[e][k][i][coupled_c.unwrap_or(0)],
                            _ => a,
                        }
                    })
                    .collect();
                idx += n;
                rows.push(row);
            }
            advantage.push(rows);
        }
        Ok(Prepared {
            advantage,
            cost_targets,
            frac_violating: violating as f64 / total.max(1) as f64,
            mean_violation: batch_mean_violation,
            mean_h_violation,
        })
    }

    /// Constraint-value targets `[E][T]`, each row `N·M` agent-major.
    fn constraint_targets(&self, batch: &RolloutBatch) -> Result<Vec<Vec<Vec<f64>>>> {
        let n = self.env.spec().n_agents;
        // Fully observed targets never read the network's predictions.
        let observed = self.algo.vh_lambda == 1.0 && self.algo.vh_bootstrap == VhBootstrap::Constraint;
        let vh = if observed {
            batch.episodes.iter().map(|ep| ep.h.clone()).collect()
        } else {
            self.constraint_values(batch)?
        };
        let mut out = Vec::with_capacity(batch.episodes.len());
        for (ep, v) in batch.episodes.iter().zip(&vh) {
            let t = ep.horizon();
            let mut rows = vec![vec![0.0; n * N_CONSTRAINTS]; t];
            for i in 0..n {
                for m in 0..N_CONSTRAINTS {
                    let h: Vec<f64> = (0..t).map(|k| ep.h[k][i][m]).collect();
                    let mut next: Vec<f64> = (1..=t).map(|k| v[k][i][m]).collect();
                    if self.algo.vh_bootstrap == VhBootstrap::Constraint {
                        next[t - 1] = ep.h[t][i][m];
                    }
                    let y = max_backup_targets(&h, &next, self.algo.vh_lambda)?;
                    for k in 0..t {
                        rows[k][i * N_CONSTRAINTS + m] = y[k];
                    }
                }
            }
            out.push(rows);
        }
        Ok(out)
    }

    pub(super) fn chunk_len(&self) -> usize {
        if self.nets.policy.cfg.gru {
            self.nets.policy.cfg.gru_chunk
        } else {
            1
        }
    }

    /// Splits shuffled `(episode, first step)` units into minibatches.
    pub(super) fn shuffled_units(&self, batch: &RolloutBatch, chunk: usize, stream: u64) -> Vec<Vec<(usize, usize)>> {
        let mut units: Vec<(usize, usize)> = batch
            .episodes
            .iter()
            .enumerate()
            .flat_map(|(e, ep)| (0..ep.horizon()).step_by(chunk).map(move |k| (e, k)))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[SHUFFLE, self.state.step, stream]));
        units.shuffle(&mut rng);
        let per = units.len().div_ceil(self.algo.minibatches);
        units.chunks(per.max(1)).map(<[_]>::to_vec).collect()
    }

    pub(super) fn policy_minibatch(
        &self,
        batch: &RolloutBatch,
        prepared: &Prepared,
        units: &[(usize, usize)],
    ) -> Result<(PolicyMinibatch, Vec<(GraphBatch, Pooling, Vec<f64>)>)> {
        let n = self.env.spec().n_agents;
        let chunk = self.chunk_len();
        let mut steps = Vec::with_capacity(chunk);
        let mut value_steps = Vec::with_capacity(chunk);
        for j in 0..chunk {
            let graphs: Vec<_> = units.iter().flat_map(|&(e, k)| &batch.episodes[e].graphs[k + j]).collect();
            let gb = self.graph_batch(&graphs);
            let actions: Vec<f32> = units
                .iter()
                .flat_map(|&(e, k)| batch.episodes[e].actions[k + j].iter().flat_map(|a| [a[0] as f32, a[1] as f32]))
                .collect();
            let advantage = units.iter().flat_map(|&(e, k)| prepared.advantage[e][k + j].iter().copied()).collect();
            let targets = units.iter().map(|&(e, k)| prepared.cost_targets[e][k + j]).collect();
            value_steps.push((gb.clone(), Pooling::uniform(units.len(), n), targets));
            steps.push(PolicyStep {
                batch: gb,
                actions: Tensor::new(vec![units.len() * n, 2], actions)?,
                old_log_prob: vec![0.0; units.len() * n],
                advantage,
            });
        }
        let initial_hidden = if self.nets.policy.cfg.gru {
            let width = self.nets.policy.cfg.msg_dim;
            let data = units
                .iter()
                .flat_map(|&(e, k)| batch.episodes[e].hidden[k].data().iter().copied())
                .collect();
            Some(Tensor::new(vec![units.len() * n, width], data)?)
        } else {
            None
        };
        let mut mb = PolicyMinibatch { steps, initial_hidden };
        let mut tape = Tape::new();
        let pv = tape.frozen_params(&self.state.policy);
        let (lps, _) = policy_log_probs(&mut tape, &pv, &self.nets.policy, &mb);
        for (step, lp) in mb.steps.iter_mut().zip(lps) {
            step.old_log_prob = tape.finish(lp)?.data().iter().map(|&x| x as f64).collect();
        }
        Ok((mb, value_steps))
    }

    /// One full iteration: collect, build targets, one shuffled epoch of
    /// clipped Adam steps on all three networks.
    pub fn update(&mut self) -> Result<UpdateReport> {
        let step = self.state.step;
        let nu = self.nu();
        let beta = self.beta();
        let mode = self.algo.mode;
        let stochastic = self.rollout(RolloutKind::Stochastic)?;
        let prepared = self.prepare(&stochastic, nu, beta)?;

        let learn_vh = mode.learns_constraint_values();
        let vh_batch = match (learn_vh, self.algo.vh_rollout) {
            (true, VhRollout::Deterministic) => Some(self.rollout(RolloutKind::Deterministic)?),
            (true, VhRollout::Stochastic) => Some(stochastic.clone()),
            (false, _) => None,
        };
        let vh_targets = vh_batch.as_ref().map(|b| self.constraint_targets(b)).transpose()?;

        let policy_units = self.shuffled_units(&stochastic, self.chunk_len(), 0);
        let minibatches = policy_units
            .iter()
            .map(|u| self.policy_minibatch(&stochastic, &prepared, u))
            .collect::<Result<Vec<_>>>()?;
        let vh_units = vh_batch.as_ref().map(|b| self.shuffled_units(b, 1, 1));

        let clip = self.algo.clip_eps;
        let ent = self.algo.entropy_coef;
        let max_norm = self.algo.max_grad_norm;
        let (mut loss_pi, mut loss_vl, mut loss_vh) = (0.0, 0.0, 0.0);
        let count = minibatches.len() as f64;
        for (j, (mb, value_steps)) in minibatches.iter().enumerate() {
            let policy = &self.nets.policy;
            let (l, mut g) = grad(&self.state.policy, |t, pv| Ok(policy_loss(t, pv, policy, mb, clip, ent)?.0))?;
            clip_grad_norm(&mut g, max_norm);
            adam_step(&mut self.state.policy, &g, &mut self.state.policy_adam, &AdamConfig::new(self.algo.lr_policy));
            loss_pi += l as f64 / count;

            let cost_net = &self.nets.cost_value;
            let (l, mut g) = grad(&self.state.cost_value, |t, pv| {
                let mut total = None;
                for (gb, pool, targets) in value_steps {
                    let l = cost_value_loss(t, pv, cost_net, gb, pool, targets)?;
                    total = Some(match total {
                        Some(acc) => t.add(acc, l),
                        None => l,
                    });
                }
                Ok(t.scale(total.expect("non-empty chunk"), 1.0 / value_steps.len() as f64))
            })?;
            clip_grad_norm(&mut g, max_norm);
            adam_step(
                &mut self.state.cost_value,
                &g,
                &mut self.state.cost_value_adam,
                &AdamConfig::new(self.algo.lr_cost_value),
            );
            loss_vl += l as f64 / count;

            if let (Some(b), Some(targets), Some(units)) = (&vh_batch, &vh_targets, &vh_units) {
                let Some(units) = units.get(j) else { continue };
                let graphs: Vec<_> = units.iter().flat_map(|&(e, k)| &b.episodes[e].graphs[k]).collect();
                let gb = self.graph_batch(&graphs);
                let y: Vec<f64> = units.iter().flat_map(|&(e, k)| targets[e][k].iter().copied()).collect();
                let net = &self.nets.constraint_value;
                let (l, mut g) = grad(&self.state.constraint_value, |t, pv| constraint_value_loss(t, pv, net, &gb, &y))?;
                clip_grad_norm(&mut g, max_norm);
                adam_step(
                    &mut self.state.constraint_value,
                    &g,
                    &mut self.state.constraint_value_adam,
                    &AdamConfig::new(self.algo.lr_constraint_value),
                );
                loss_vh += l as f64 / count;
            }
        }

        if let Mode::Lagrangian { lr, .. } = mode {
            for m in 0..N_CONSTRAINTS {
                self.state.lambda[m] = lagrangian_step(self.state.lambda[m], prepared.mean_h_violation[m], lr);
            }
        }
        for (name, params) in [
            ("policy", &self.state.policy),
            ("cost value", &self.state.cost_value),
            ("constraint value", &self.state.constraint_value),
        ] {
            if !params.is_finite() {
                return Err(Error::Diverged {
                    step,
                    reason: format!("non-finite {name} parameters"),
                });
            }
        }
        self.state.step += 1;
        let (cost_mean, cost_std) = stochastic.cost_stats();
        Ok(UpdateReport {
            step,
            cost_mean,
            cost_std,
            safety_rate: stochastic.safety_rate(),
            nu,
            beta,
            lambda: self.state.lambda.to_vec(),
            loss_policy: loss_pi,
            loss_vl,
            loss_vh,
            frac_violating: prepared.frac_violating,
            mean_violation: prepared.mean_violation,
        })
    }
}
