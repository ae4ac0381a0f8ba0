use proptest::prelude::*;

use super::*;
use crate::diffmath::{check_gradients, GradCheckConfig, ParamSet, Tape, Tensor};
use crate::env::{AgentState, Env, EnvKind, EnvSpec, JointState, ObsGraph};

fn scene(n: usize, seed: u64) -> (Env, JointState) {
    let env = Env::new(EnvSpec::new(EnvKind::Target, n)).unwrap();
    let s = env.reset(seed).unwrap();
    (env, s)
}

fn batch<T: crate::diffmath::Real>(graphs: &[ObsGraph]) -> GraphBatch<T> {
    GraphBatch::new(graphs, 0.5, NetConfig::default().heads)
}

/// Scene with agents packed closely enough to see each other.
fn crowded(n: usize) -> (Env, JointState) {
    let env = Env::new(EnvSpec::new(EnvKind::Spread, n).with_arena_side(0.6)).unwrap();
    let s = env.reset(11).unwrap();
    (env, s)
}

#[test]
fn attention_weights_are_normalized() {
    let (env, s) = crowded(4);
    let graphs = env.observe_all(&s);
    assert!(graphs.iter().any(|g| g.neighbor_agents().count() > 0));
    let cfg = NetConfig::default();
    let p: ParamSet<f64> = PolicyNet::new(cfg.clone(), 2).init(0);
    let b = batch::<f64>(&graphs);
    for w in attention_weights(&p, &cfg, cfg.policy_layers, &b).unwrap() {
        for g in 0..b.n_graphs {
            for h in 0..cfg.heads {
                let sum: f64 = (0..b.rows()).filter(|&r| b.segment[r] == g).map(|r| w.data()[r * cfg.heads + h]).sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
        assert!(w.data().iter().all(|&x| x >= 0.0));
    }
}

#[test]
fn single_node_graph_is_finite_and_deterministic() {
    let (env, s) = scene(1, 2);
    let mut g = env.observe(&s, 0);
    g.nodes.truncate(1);
    let net = PolicyNet::new(NetConfig::default(), 2);
    let p: ParamSet<f32> = net.init(1);
    let b = batch::<f32>(std::slice::from_ref(&g));
    let a = net.eval(&p, &b, None).unwrap();
    let c = net.eval(&p, &b, None).unwrap();
    assert!(a.mean.is_finite());
    assert_eq!(a.mean, c.mean);
}

#[test]
fn duplicate_senders_get_identical_weights() {
    let (env, s) = crowded(3);
    let mut g = env.observe(&s, 0);
    let dup = g.nodes[1];
    g.nodes.push(dup);
    let cfg = NetConfig::default();
    let p: ParamSet<f64> = PolicyNet::new(cfg.clone(), 2).init(5);
    let b = batch::<f64>(std::slice::from_ref(&g));
    let last = g.nodes.len() - 1;
    for w in attention_weights(&p, &cfg, 2, &b).unwrap() {
        for h in 0..cfg.heads {
            assert_eq!(w.data()[cfg.heads + h], w.data()[last * cfg.heads + h]);
        }
    }
}

#[test]
fn log_prob_fixtures() {
    let mut t: Tape<f64> = Tape::new();
    let mean = t.constant(Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap());
    let ls = t.constant(Tensor::zeros(vec![2]));
    let at_mean = t.constant(Tensor::new(vec![1, 2], vec![0.3, -0.7]).unwrap());
    let shifted = t.constant(Tensor::new(vec![1, 2], vec![1.3, -0.7]).unwrap());
    let lp0 = gaussian_log_prob(&mut t, mean, ls, at_mean);
    let lp1 = gaussian_log_prob(&mut t, mean, ls, shifted);
    let (a, b) = (t.value(lp0).item(), t.value(lp1).item());
    assert!((a + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    assert!((a - b - 0.5).abs() < 1e-12);
}

#[test]
fn tiny_log_std_concentrates_samples() {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let sigma = (LOG_STD_MIN).exp();
    let close = (0..10_000)
        .filter(|_| {
            let e: f64 = StandardNormal.sample(&mut rng);
            (sigma * e).abs() < 1e-3
        })
        .count();
    assert!(close as f64 / 10_000.0 > 0.999);
}

#[test]
fn policy_mean_is_deterministic_and_log_std_clamped() {
    let (env, s) = scene(3, 4);
    let net = PolicyNet::new(NetConfig::default(), 2);
    let mut p: ParamSet<f32> = net.init(2);
    p.get_mut("log_std").unwrap().data_mut().copy_from_slice(&[-50.0, 9.0]);
    let b = batch::<f32>(&env.observe_all(&s));
    let o1 = net.eval(&p, &b, None).unwrap();
    let o2 = net.eval(&p, &b, None).unwrap();
    assert_eq!(o1.mean, o2.mean);
    assert_eq!(o1.log_std.data(), &[-10.0, 2.0]);
}

fn fd_cfg() -> GradCheckConfig {
    GradCheckConfig::default()
}

#[test]
fn policy_log_prob_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let (env, s) = crowded(3);
        let s = env.step(&s, &[[0.5, -0.2], [0.1, 0.9], [-0.4, 0.3]]).unwrap();
        let graphs = env.observe_all(&s);
        let net = PolicyNet::new(NetConfig::default(), 2);
        let mut p: ParamSet<f64> = net.init(seed);
        p.get_mut("log_std").unwrap().data_mut().copy_from_slice(&[-0.3, 0.2]);
        let b = batch::<f64>(&graphs);
        let acts = Tensor::new(vec![3, 2], vec![0.2, -0.1, 0.5, 0.4, -0.9, 0.05]).unwrap();
        let report = check_gradients(
            &p,
            |t, pv| {
                let (mean, ls, _) = net.forward(t, pv, &b, None);
                let a = t.constant(acts.clone());
                let lp = gaussian_log_prob(t, mean, ls, a);
                Ok(t.sum_all(lp))
            },
            &fd_cfg(),
        )
        .unwrap();
        assert!(report.passes(1e-3), "seed {seed}: {report:?}");
    }
}

#[test]
fn value_gradients_match_finite_differences() {
    for seed in 0..10 {
        let (env, s) = crowded(3);
        let graphs = env.observe_all(&s);
        let b = batch::<f64>(&graphs);
        let cost = CostValueNet::new(NetConfig::default());
        let pc: ParamSet<f64> = cost.init(seed);
        let pool = Pooling::uniform(1, 3);
        let r = check_gradients(
            &pc,
            |t, pv| {
                let v = cost.forward(t, pv, &b, &pool);
                Ok(t.sum_all(v))
            },
            &fd_cfg(),
        )
        .unwrap();
        assert!(r.passes(1e-3), "cost value seed {seed}: {r:?}");

        let cons = ConstraintValueNet::new(NetConfig::default(), 2);
        let ph: ParamSet<f64> = cons.init(seed);
        let r = check_gradients(
            &ph,
            |t, pv| {
                let v = cons.forward(t, pv, &b);
                let v = t.square(v);
                Ok(t.sum_all(v))
            },
            &fd_cfg(),
        )
        .unwrap();
        assert!(r.passes(1e-3), "constraint value seed {seed}: {r:?}");
    }
}

#[test]
fn gru_policy_gradient_matches_finite_differences() {
    let cfg = NetConfig {
        gru: true,
        ..NetConfig::default()
    };
    let (env, s) = crowded(3);
    let graphs = env.observe_all(&s);
    let net = PolicyNet::new(cfg, 2);
    let p: ParamSet<f64> = net.init(3);
    let b = batch::<f64>(&graphs);
    let report = check_gradients(
        &p,
        |t, pv| {
            let (m1, _, h) = net.forward(t, pv, &b, None);
            let (m2, _, _) = net.forward(t, pv, &b, h);
            let s = t.add(m1, m2);
            let s = t.square(s);
            Ok(t.sum_all(s))
        },
        &fd_cfg(),
    )
    .unwrap();
    assert!(report.passes(1e-3), "{report:?}");
}

#[test]
fn cost_value_is_permutation_invariant() {
    let (env, s) = crowded(4);
    let mut graphs = env.observe_all(&s);
    let net = CostValueNet::new(NetConfig::default());
    let p: ParamSet<f32> = net.init(0);
    let pool = Pooling::uniform(1, 4);
    let v1 = net.eval(&p, &batch(&graphs), &pool).unwrap().item();
    graphs.reverse();
    let v2 = net.eval(&p, &batch(&graphs), &pool).unwrap().item();
    assert!((v1 - v2).abs() < 1e-5);
}

#[test]
fn constraint_value_ignores_agents_beyond_radius() {
    let (env, s) = scene(2, 9);
    let net = ConstraintValueNet::new(NetConfig::default(), 2);
    let p: ParamSet<f32> = net.init(0);
    let base = net.eval(&p, &batch(&[env.observe(&s, 0)])).unwrap();
    let mut far = s.clone();
    let me = s.agents[0].pos();
    far.agents.push(AgentState::DoubleIntegrator {
        pos: [me[0] + 0.6, me[1]],
        vel: [1.0, 1.0],
    });
    far.goals.push([0.0, 0.0]);
    let with = net.eval(&p, &batch(&[env.observe(&far, 0)])).unwrap();
    assert_eq!(base.data(), with.data());
}

proptest! {
    #[test]
    fn sender_order_does_not_change_embeddings(seed in 0u64..200, rot in 1usize..6) {
        let (env, s) = crowded(4);
        let s = env.step(&s, &[[0.3, 0.1]; 4]).unwrap();
        let g = env.observe(&s, (seed % 4) as usize);
        let mut h = g.clone();
        let k = h.nodes.len() - 1;
        h.nodes[1..].rotate_left(rot % k.max(1));
        let cfg = NetConfig::default();
        let p: ParamSet<f32> = ConstraintValueNet::new(cfg.clone(), 2).init(seed);
        let net = ConstraintValueNet::new(cfg, 2);
        let a = net.eval(&p, &batch(&[g])).unwrap();
        let b = net.eval(&p, &batch(&[h])).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-5);
        }
    }
}

