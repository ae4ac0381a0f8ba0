//! Stochastic and deterministic episode collection over independent
//! environment instances.
//!
//! Instance `e` of a collection with base seed `s` resets from
//! `derive_seed(s, [RESET, e])` and samples actions from its own stream
//! `derive_seed(s, [SAMPLE, e])`, so results do not depend on how instances
//! are spread over worker threads.

#[cfg(test)]
mod tests;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffmath::{ParamSet, Tensor};
use crate::env::{Env, JointState, ObsGraph, StepRecord, Vec2, N_CONSTRAINTS};
use crate::error::{Error, Result};
use crate::gnn::{GraphBatch, PolicyNet};

const RESET: u64 = 0x5245_5345_54;
const SAMPLE: u64 = 0x5341_4d50_4c45;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministically derives an independent seed from a base and a path.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

/// How actions are chosen during collection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RolloutKind {
    /// Sample from the Gaussian policy.
    Stochastic,
    /// Act with the policy mean.
    Deterministic,
}

/// One `T`-step episode of one instance.
#[derive(Clone, Debug)]
pub struct Episode {
    pub reset_seed: u64,
    /// `T + 1` joint states `x⁰ … xᵀ`.
    pub states: Vec<JointState>,
    /// `[T + 1][N]` observation graphs.
    pub graphs: Vec<Vec<ObsGraph>>,
    /// `[T][N]` pre-clamp actions.
    pub actions: Vec<Vec<Vec2>>,
    /// `[T]` joint stage costs.
    pub costs: Vec<f64>,
    /// `[T + 1][N]` constraint values.
    pub h: Vec<Vec<[f64; N_CONSTRAINTS]>>,
    /// `[T]` recurrent states `[N, hidden]` entering each step, when enabled.
    pub hidden: Vec<Tensor>,
}

impl Episode {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn n_agents(&self) -> usize {
        self.states[0].n_agents()
    }

    pub fn total_cost(&self) -> f64 {
        self.costs.iter().sum()
    }

    /// Trajectory records of every state, the last one terminal.
    pub fn records(&self, env: &Env) -> Vec<StepRecord> {
        self.states
            .iter()
            .enumerate()
            .map(|(k, s)| StepRecord::capture(env, s, self.actions.get(k).map_or(&[][..], Vec::as_slice)))
            .collect()
    }

    /// Per agent: `max_k max_m h ≤ 0` over all recorded states.
    pub fn agent_safe(&self) -> Vec<bool> {
        (0..self.n_agents())
            .map(|i| {
                self.h
                    .iter()
                    .all(|hk| hk[i].iter().all(|&v| v <= 0.0))
            })
            .collect()
    }
}

/// Episodes collected with one parameter snapshot.
#[derive(Clone, Debug)]
pub struct RolloutBatch {
    pub kind: RolloutKind,
    pub episodes: Vec<Episode>,
}

impl RolloutBatch {
    pub fn n_transitions(&self) -> usize {
        self.episodes.iter().map(|e| e.horizon() * e.n_agents()).sum()
    }

    /// Fraction of (episode, agent) pairs that stayed safe.
    pub fn safety_rate(&self) -> f64 {
        let flags: Vec<bool> = self.episodes.iter().flat_map(Episode::agent_safe).collect();
        flags.iter().filter(|&&s| s).count() as f64 / flags.len().max(1) as f64
    }

    /// Mean and standard deviation of per-episode total cost.
    pub fn cost_stats(&self) -> (f64, f64) {
        let c: Vec<f64> = self.episodes.iter().map(Episode::total_cost).collect();
        mean_std(&c)
    }
}

pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (0.0, 0.0);
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Worker count: the `THREADS` environment variable when set, else the
/// available parallelism, never more than the number of jobs.
pub fn worker_count(jobs: usize) -> usize {
    let cap = std::env::var("THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    cap.min(jobs).max(1)
}

/// Runs `f` over `0..jobs` on up to `workers` threads; results in index order.
pub fn parallel_map<R: Send>(
    jobs: usize,
    workers: usize,
    f: impl Fn(std::ops::Range<usize>) -> Result<Vec<R>> + Sync,
) -> Result<Vec<R>> {
    let workers = workers.clamp(1, jobs.max(1));
    if workers == 1 {
        return f(0..jobs);
    }
    let chunk = jobs.div_ceil(workers);
    let ranges: Vec<_> = (0..workers)
        .map(|w| (w * chunk).min(jobs)..((w + 1) * chunk).min(jobs))
        .filter(|r| !r.is_empty())
        .collect();
    let parts: Vec<Result<Vec<R>>> = std::thread::scope(|s| {
        let handles: Vec<_> = ranges.into_iter().map(|r| s.spawn(|| f(r))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Invalid("worker panicked".into()))))
            .collect()
    });
    let mut out = Vec::with_capacity(jobs);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Collection settings.
#[derive(Clone, Copy, Debug)]
pub struct RolloutConfig {
    pub n_envs: usize,
    pub horizon: usize,
    pub seed: u64,
    pub kind: RolloutKind,
    /// Worker threads; `None` consults [`worker_count`].
    pub workers: Option<usize>,
}

/// Collects `n_envs` episodes of `horizon` steps.
pub fn collect(env: &Env, policy: &PolicyNet, params: &ParamSet, cfg: &RolloutConfig) -> Result<RolloutBatch> {
    if cfg.n_envs == 0 {
        return Err(Error::Invalid("rollout needs at least one environment".into()));
    }
    let workers = cfg.workers.unwrap_or_else(|| worker_count(cfg.n_envs));
    let episodes = parallel_map(cfg.n_envs, workers, |range| run_instances(env, policy, params, cfg, range))?;
    Ok(RolloutBatch {
        kind: cfg.kind,
        episodes,
    })
}

/// Steps the given instances in lockstep, one batched policy evaluation per step.
fn run_instances(
    env: &Env,
    policy: &PolicyNet,
    params: &ParamSet,
    cfg: &RolloutConfig,
    range: std::ops::Range<usize>,
) -> Result<Vec<Episode>> {
    let n = env.spec().n_agents;
    let heads = policy.cfg.heads;
    let radius = env.spec().sensing_radius;
    let mut eps: Vec<Episode> = Vec::with_capacity(range.len());
    let mut rngs: Vec<ChaCha8Rng> = Vec::with_capacity(range.len());
    for e in range.clone() {
        let reset_seed = derive_seed(cfg.seed, &[RESET, e as u64]);
        let s0 = env.reset(reset_seed)?;
        let g0 = env.observe_all(&s0);
        let h0 = g0.iter().map(|g| env.constraints(g)).collect();
        eps.push(Episode {
            reset_seed,
            states: vec![s0],
            graphs: vec![g0],
            actions: Vec::with_capacity(cfg.horizon),
            costs: Vec::with_capacity(cfg.horizon),
            h: vec![h0],
            hidden: Vec::new(),
        });
        rngs.push(ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[SAMPLE, e as u64])));
    }
    let mut hidden: Option<Tensor> = None;
    for _ in 0..cfg.horizon {
        let batch: GraphBatch = GraphBatch::new(eps.iter().flat_map(|ep| ep.graphs.last().unwrap()), radius, heads);
        if policy.cfg.gru {
            let h = hidden
                .take()
                .unwrap_or_else(|| Tensor::zeros(vec![eps.len() * n, policy.cfg.msg_dim]));
            let width = policy.cfg.msg_dim;
            for (j, ep) in eps.iter_mut().enumerate() {
                let rows = h.data()[j * n * width..(j + 1) * n * width].to_vec();
                ep.hidden.push(Tensor::new(vec![n, width], rows)?);
            }
            hidden = Some(h);
        }
        let out = policy.eval(params, &batch, hidden.as_ref())?;
        hidden = out.hidden;
        let std: Vec<f64> = out.log_std.data().iter().map(|&l| (l as f64).exp()).collect();
        for (j, (ep, rng)) in eps.iter_mut().zip(rngs.iter_mut()).enumerate() {
            let actions: Vec<Vec2> = (0..n)
                .map(|i| {
                    let m = out.mean.row(j * n + i);
                    let mut a = [m[0] as f64, m[1] as f64];
                    if cfg.kind == RolloutKind::Stochastic {
                        for (d, ad) in a.iter_mut().enumerate() {
                            let z: f64 = StandardNormal.sample(rng);
                            *ad += std[d] * z;
                        }
                    }
                    a
                })
                .collect();
            let s = ep.states.last().unwrap();
            let cost = env.cost(s, &actions);
            let next = env.step(s, &actions)?;
            let g = env.observe_all(&next);
            ep.h.push(g.iter().map(|g| env.constraints(g)).collect());
            ep.graphs.push(g);
            ep.states.push(next);
            ep.actions.push(actions);
            ep.costs.push(cost);
        }
    }
    Ok(eps)
}
