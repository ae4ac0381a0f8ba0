use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GraphBatch, INPUT_DIM};
use crate::diffmath::{orthogonal_init, Index, ParamSet, ParamVars, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Network shape shared by the policy and both value functions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    /// Message-passing width.
    pub msg_dim: usize,
    /// Encoder output width.
    pub out_dim: usize,
    pub heads: usize,
    pub head_hidden: Vec<usize>,
    pub policy_layers: usize,
    pub cost_value_layers: usize,
    pub constraint_value_layers: usize,
    pub layer_norm: bool,
    /// Recurrent cell after the policy encoder.
    pub gru: bool,
    /// Sequence chunk length for recurrent training.
    pub gru_chunk: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            msg_dim: 32,
            out_dim: 64,
            heads: 3,
            head_hidden: vec![32, 32],
            policy_layers: 2,
            cost_value_layers: 2,
            constraint_value_layers: 1,
            layer_norm: true,
            gru: false,
            gru_chunk: 16,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.msg_dim,
            self.out_dim,
            self.heads,
            self.policy_layers,
            self.cost_value_layers,
            self.constraint_value_layers,
            self.gru_chunk,
        ];
        if dims.contains(&0) || self.head_hidden.contains(&0) {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        Ok(())
    }
}

fn linear<T: Real>(p: &mut ParamSet<T>, name: &str, fan_in: usize, fan_out: usize, gain: f64, rng: &mut ChaCha8Rng) {
    p.insert(format!("{name}/w"), orthogonal_init(fan_in, fan_out, gain, rng));
    p.insert(format!("{name}/b"), Tensor::zeros(vec![fan_out]));
}

fn init_encoder<T: Real>(p: &mut ParamSet<T>, cfg: &NetConfig, layers: usize, rng: &mut ChaCha8Rng) {
    let (d, hd) = (cfg.msg_dim, cfg.msg_dim * cfg.heads);
    let relu_gain = 2f64.sqrt();
    linear(p, "enc/in", INPUT_DIM, d, relu_gain, rng);
    for l in 0..layers {
        for w in ["wq", "wk", "wv"] {
            p.insert(format!("enc/{l}/{w}"), orthogonal_init(d, hd, 1.0, rng));
        }
        linear(p, &format!("enc/{l}/o"), hd, d, relu_gain, rng);
        if cfg.layer_norm {
            p.insert(format!("enc/{l}/ln_g"), Tensor::full(vec![d], T::one()));
            p.insert(format!("enc/{l}/ln_b"), Tensor::zeros(vec![d]));
        }
    }
    linear(p, "enc/out", d, cfg.out_dim, relu_gain, rng);
}

fn init_head<T: Real>(p: &mut ParamSet<T>, cfg: &NetConfig, input: usize, out: usize, gain: f64, rng: &mut ChaCha8Rng) {
    let mut fan_in = input;
    for (i, &h) in cfg.head_hidden.iter().enumerate() {
        linear(p, &format!("head/{i}"), fan_in, h, 2f64.sqrt(), rng);
        fan_in = h;
    }
    linear(p, "head/final", fan_in, out, gain, rng);
}

fn dense<T: Real>(tape: &mut Tape<T>, pv: &ParamVars, name: &str, x: Var) -> Var {
    let y = tape.matmul(x, pv.get(&format!("{name}/w")));
    tape.add_row(y, pv.get(&format!("{name}/b")))
}

fn head<T: Real>(tape: &mut Tape<T>, pv: &ParamVars, cfg: &NetConfig, x: Var) -> Var {
    let mut h = x;
    for i in 0..cfg.head_hidden.len() {
        h = dense(tape, pv, &format!("head/{i}"), h);
        h = tape.relu(h);
    }
    dense(tape, pv, "head/final", h)
}

/// Attention encoder over a packed batch; returns `[graphs, out_dim]`
/// receiver embeddings.
pub fn encode<T: Real>(
    tape: &mut Tape<T>,
    pv: &ParamVars,
    cfg: &NetConfig,
    layers: usize,
    batch: &GraphBatch<T>,
) -> Var {
    encode_inner(tape, pv, cfg, layers, batch, None)
}

/// Per-layer `[rows, heads]` attention weights of the encoder.
pub fn attention_weights<T: Real>(
    params: &ParamSet<T>,
    cfg: &NetConfig,
    layers: usize,
    batch: &GraphBatch<T>,
) -> Result<Vec<Tensor<T>>> {
    let mut tape = Tape::new();
    let pv = tape.frozen_params(params);
    let mut weights = Vec::new();
    encode_inner(&mut tape, &pv, cfg, layers, batch, Some(&mut weights));
    tape.check()?;
    Ok(weights.into_iter().map(|w| tape.value(w).clone()).collect())
}

fn encode_inner<T: Real>(
    tape: &mut Tape<T>,
    pv: &ParamVars,
    cfg: &NetConfig,
    layers: usize,
    batch: &GraphBatch<T>,
    mut capture: Option<&mut Vec<Var>>,
) -> Var {
    let (d, heads) = (cfg.msg_dim, cfg.heads);
    let rows = batch.rows();
    let b = batch.n_graphs;
    let x = tape.constant(batch.inputs.clone());
    let atten = tape.constant(batch.attenuation.clone());
    let msg = dense(tape, pv, "enc/in", x);
    let msg = tape.relu(msg);
    let mut h = tape.gather_rows(msg, &batch.ego);
    let inv_sqrt = 1.0 / (d as f64).sqrt();
    for l in 0..layers {
        let q = tape.matmul(h, pv.get(&format!("enc/{l}/wq")));
        let k = tape.matmul(msg, pv.get(&format!("enc/{l}/wk")));
        let v = tape.matmul(msg, pv.get(&format!("enc/{l}/wv")));
        let q_rows = tape.gather_rows(q, &batch.segment);
        let qk = tape.mul(q_rows, k);
        let qk = tape.reshape(qk, &[rows * heads, d]);
        let logits = tape.sum_last(qk);
        let logits = tape.reshape(logits, &[rows, heads]);
        let logits = tape.scale(logits, inv_sqrt);
        let logits = tape.add(logits, atten);
        let weights = tape.segment_softmax(logits, &batch.segment, b);
        if let Some(c) = capture.as_deref_mut() {
            c.push(weights);
        }
        let weights = tape.reshape(weights, &[rows * heads]);
        let v = tape.reshape(v, &[rows * heads, d]);
        let weighted = tape.mul_col(v, weights);
        let weighted = tape.reshape(weighted, &[rows, heads * d]);
        let agg = tape.segment_sum(weighted, &batch.segment, b);
        let o = dense(tape, pv, &format!("enc/{l}/o"), agg);
        let o = tape.relu(o);
        let sum = tape.add(h, o);
        h = if cfg.layer_norm {
            tape.layer_norm(sum, pv.get(&format!("enc/{l}/ln_g")), pv.get(&format!("enc/{l}/ln_b")))
        } else {
            sum
        };
    }
    let out = dense(tape, pv, "enc/out", h);
    tape.relu(out)
}

/// Diagonal-Gaussian log density of `actions` (`[B, A]` constant) under
/// mean `[B, A]` and shared log-std `[A]`; returns `[B]`.
pub fn gaussian_log_prob<T: Real>(tape: &mut Tape<T>, mean: Var, log_std: Var, actions: Var) -> Var {
    let dim = tape.value(log_std).numel();
    let diff = tape.sub(actions, mean);
    let neg = tape.neg(log_std);
    let inv_std = tape.exp(neg);
    let z = tape.mul_row(diff, inv_std);
    let z2 = tape.square(z);
    let quad = tape.sum_last(z2);
    let quad = tape.scale(quad, -0.5);
    let ls_sum = tape.sum_all(log_std);
    let ls_sum = tape.neg(ls_sum);
    let lp = tape.add_scalar_var(quad, ls_sum);
    tape.add_const(lp, -0.5 * dim as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Entropy of the diagonal Gaussian with log-std `[A]` (scalar).
pub fn gaussian_entropy<T: Real>(tape: &mut Tape<T>, log_std: Var) -> Var {
    let dim = tape.value(log_std).numel();
    let s = tape.sum_all(log_std);
    tape.add_const(s, 0.5 * dim as f64 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln())
}

/// Stochastic policy: Gaussian mean from the receiver embedding plus a
/// state-independent learnable log-std.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub cfg: NetConfig,
    pub action_dim: usize,
}

impl PolicyNet {
    pub fn new(cfg: NetConfig, action_dim: usize) -> Self {
        Self { cfg, action_dim }
    }

    pub fn init<T: Real>(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        init_encoder(&mut p, &self.cfg, self.cfg.policy_layers, &mut rng);
        let mut feat = self.cfg.out_dim;
        if self.cfg.gru {
            init_gru(&mut p, feat, self.cfg.msg_dim, &mut rng);
            feat = self.cfg.msg_dim;
        }
        init_head(&mut p, &self.cfg, feat, self.action_dim, 0.01, &mut rng);
        p.insert("log_std", Tensor::zeros(vec![self.action_dim]));
        p
    }

    /// Returns `(mean [B, A], clamped log-std [A])`. With the recurrent cell
    /// enabled, `hidden` supplies the `[B, msg_dim]` state entering this step
    /// and the updated state is returned as the third element.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        pv: &ParamVars,
        batch: &GraphBatch<T>,
        hidden: Option<Var>,
    ) -> (Var, Var, Option<Var>) {
        let mut feat = encode(tape, pv, &self.cfg, self.cfg.policy_layers, batch);
        let mut next_hidden = None;
        if self.cfg.gru {
            let h = hidden.unwrap_or_else(|| {
                tape.constant(Tensor::zeros(vec![batch.n_graphs, self.cfg.msg_dim]))
            });
            let h = gru_cell(tape, pv, feat, h);
            next_hidden = Some(h);
            feat = h;
        }
        let mean = head(tape, pv, &self.cfg, feat);
        let log_std = tape.clamp(pv.get("log_std"), LOG_STD_MIN, LOG_STD_MAX);
        (mean, log_std, next_hidden)
    }

    /// Evaluates the mean and log-std without recording gradients.
    pub fn eval<T: Real>(
        &self,
        params: &ParamSet<T>,
        batch: &GraphBatch<T>,
        hidden: Option<&Tensor<T>>,
    ) -> Result<PolicyOutput<T>> {
        let mut tape = Tape::new();
        let pv = tape.frozen_params(params);
        let h = hidden.map(|h| tape.constant(h.clone()));
        let (mean, log_std, next) = self.forward(&mut tape, &pv, batch, h);
        Ok(PolicyOutput {
            mean: tape.finish(mean)?,
            log_std: tape.finish(log_std)?,
            hidden: next.map(|v| tape.value(v).clone()),
        })
    }
}

/// Forward values of [`PolicyNet`].
#[derive(Clone, Debug)]
pub struct PolicyOutput<T: Real = f32> {
    pub mean: Tensor<T>,
    pub log_std: Tensor<T>,
    pub hidden: Option<Tensor<T>>,
}

pub(crate) fn init_gru<T: Real>(p: &mut ParamSet<T>, input: usize, hidden: usize, rng: &mut ChaCha8Rng) {
    for gate in ["z", "r", "n"] {
        p.insert(format!("gru/{gate}/wx"), orthogonal_init(input, hidden, 1.0, rng));
        p.insert(format!("gru/{gate}/wh"), orthogonal_init(hidden, hidden, 1.0, rng));
        p.insert(format!("gru/{gate}/b"), Tensor::zeros(vec![hidden]));
    }
}

fn sigmoid<T: Real>(tape: &mut Tape<T>, x: Var) -> Var {
    // σ(x) = (1 + tanh(x / 2)) / 2
    let half = tape.scale(x, 0.5);
    let t = tape.tanh(half);
    let t = tape.add_const(t, 1.0);
    tape.scale(t, 0.5)
}

/// Standard GRU update `h' = (1 - z)·n + z·h`.
fn gru_cell<T: Real>(tape: &mut Tape<T>, pv: &ParamVars, x: Var, h: Var) -> Var {
    let gate = |tape: &mut Tape<T>, g: &str, h_in: Var| {
        let a = tape.matmul(x, pv.get(&format!("gru/{g}/wx")));
        let b = tape.matmul(h_in, pv.get(&format!("gru/{g}/wh")));
        let s = tape.add(a, b);
        tape.add_row(s, pv.get(&format!("gru/{g}/b")))
    };
    let z = gate(tape, "z", h);
    let z = sigmoid(tape, z);
    let r = gate(tape, "r", h);
    let r = sigmoid(tape, r);
    let rh = tape.mul(r, h);
    let n = gate(tape, "n", rh);
    let n = tape.tanh(n);
    let zn = tape.mul(z, n);
    let new = tape.sub(n, zn);
    let zh = tape.mul(z, h);
    tape.add(new, zh)
}

/// Centralized cost value: encoder per agent, mean-pool over the agents of
/// each joint state, then an MLP to one scalar.
#[derive(Clone, Debug)]
pub struct CostValueNet {
    pub cfg: NetConfig,
}

impl CostValueNet {
    pub fn new(cfg: NetConfig) -> Self {
        Self { cfg }
    }

    pub fn init<T: Real>(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        init_encoder(&mut p, &self.cfg, self.cfg.cost_value_layers, &mut rng);
        init_head(&mut p, &self.cfg, self.cfg.out_dim, 1, 1.0, &mut rng);
        p
    }

    /// `pool[g]` names the joint state that graph `g` belongs to; returns
    /// `[n_pools]` values.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        pv: &ParamVars,
        batch: &GraphBatch<T>,
        pool: &Pooling,
    ) -> Var {
        let feat = encode(tape, pv, &self.cfg, self.cfg.cost_value_layers, batch);
        let summed = tape.segment_sum(feat, &pool.segment, pool.n_pools);
        let inv = tape.constant(Tensor::vector(pool.inv_counts.iter().map(|&c| T::from_f64(c)).collect()));
        let mean = tape.mul_col(summed, inv);
        let v = head(tape, pv, &self.cfg, mean);
        tape.reshape(v, &[pool.n_pools])
    }

    pub fn eval<T: Real>(&self, params: &ParamSet<T>, batch: &GraphBatch<T>, pool: &Pooling) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let pv = tape.frozen_params(params);
        let v = self.forward(&mut tape, &pv, batch, pool);
        tape.finish(v)
    }
}

/// Assignment of graphs to joint states for mean pooling.
#[derive(Clone, Debug)]
pub struct Pooling {
    pub segment: Index,
    pub n_pools: usize,
    pub inv_counts: Vec<f64>,
}

impl Pooling {
    pub fn new(segment: Vec<usize>) -> Self {
        let n_pools = segment.iter().copied().max().map_or(0, |m| m + 1);
        let mut counts = vec![0usize; n_pools];
        for &s in &segment {
            counts[s] += 1;
        }
        Self {
            segment: Arc::from(segment),
            n_pools,
            inv_counts: counts.into_iter().map(|c| 1.0 / c.max(1) as f64).collect(),
        }
    }

    /// `n_pools` consecutive groups of `per_pool` graphs.
    pub fn uniform(n_pools: usize, per_pool: usize) -> Self {
        Self::new((0..n_pools * per_pool).map(|g| g / per_pool).collect())
    }
}

/// Per-agent constraint values, one output per constraint function.
#[derive(Clone, Debug)]
pub struct ConstraintValueNet {
    pub cfg: NetConfig,
    pub n_constraints: usize,
}

impl ConstraintValueNet {
    pub fn new(cfg: NetConfig, n_constraints: usize) -> Self {
        Self { cfg, n_constraints }
    }

    pub fn init<T: Real>(&self, seed: u64) -> ParamSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        init_encoder(&mut p, &self.cfg, self.cfg.constraint_value_layers, &mut rng);
        init_head(&mut p, &self.cfg, self.cfg.out_dim, self.n_constraints, 1.0, &mut rng);
        p
    }

    /// Returns `[graphs, n_constraints]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, pv: &ParamVars, batch: &GraphBatch<T>) -> Var {
        let feat = encode(tape, pv, &self.cfg, self.cfg.constraint_value_layers, batch);
        head(tape, pv, &self.cfg, feat)
    }

    pub fn eval<T: Real>(&self, params: &ParamSet<T>, batch: &GraphBatch<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let pv = tape.frozen_params(params);
        let v = self.forward(&mut tape, &pv, batch);
        tape.finish(v)
    }
}
