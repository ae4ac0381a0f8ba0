use proptest::prelude::*;

use super::*;
use crate::diffmath::{check_gradients, grad, GradCheckConfig, ParamSet, Tape, Tensor};
use crate::env::{Env, EnvKind, EnvSpec};
use crate::gnn::{ConstraintValueNet, CostValueNet, GraphBatch, NetConfig, PolicyNet, Pooling};
use crate::rollout::RolloutKind;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-6
}

#[test]
fn gae_fixtures() {
    let (adv, targets) = gae(&[1.0, 1.0], &[0.0, 0.0, 0.0], 0.99, 0.95).unwrap();
    assert!(close(adv[0], 1.9405) && close(adv[1], 1.0));
    assert_eq!(targets, adv);

    let (adv, _) = gae(&[0.3, -0.2, 0.5], &[1.0, 2.0, -1.0, 0.5], 0.99, 0.0).unwrap();
    let delta = [0.3 + 0.99 * 2.0 - 1.0, -0.2 + 0.99 * -1.0 - 2.0, 0.5 + 0.99 * 0.5 + 1.0];
    for (a, d) in adv.iter().zip(delta) {
        assert!(close(*a, d));
    }

    // Values equal to the discounted cost-to-go are a fixed point.
    let costs = [0.5, 0.25, 1.0];
    let mut values = vec![0.0; 4];
    for k in (0..3).rev() {
        values[k] = costs[k] + 0.99 * values[k + 1];
    }
    let (adv, _) = gae(&costs, &values, 0.99, 0.95).unwrap();
    assert!(adv.iter().all(|a| a.abs() < 1e-12));

    assert!(gae(&[1.0], &[0.0], 0.99, 0.95).is_err());
}

#[test]
fn max_backup_fixtures() {
    assert_eq!(max_backup_targets(&[0.5, -1.0, -1.0], &[-1.0, -1.0, -1.0], 1.0).unwrap(), vec![0.5, -1.0, -1.0]);
    assert_eq!(max_backup_targets(&[-1.0, 0.5, -1.0], &[0.5, -1.0, -1.0], 1.0).unwrap(), vec![0.5, 0.5, -1.0]);
    for lambda in [0.0, 0.3, 0.95, 1.0] {
        let y = max_backup_targets(&[0.2; 5], &[0.2; 5], lambda).unwrap();
        assert!(y.iter().all(|&v| close(v, 0.2)));
    }
    assert!(max_backup_targets(&[], &[], 0.95).is_err());
}

#[test]
fn violation_estimate_fixtures() {
    assert_eq!(dcbf_violation(-1.0, -1.0, 0.3), 0.0);
    assert!(close(dcbf_violation(-1.0, 0.0, 0.3), 0.7));
    assert_eq!(dcbf_violation(0.0, 0.0, 0.3), 0.0);
}

#[test]
fn pseudo_advantage_fixtures() {
    assert_eq!(pseudo_advantage(-1.3, &[0.0, 0.0], 1.0), -1.3);
    assert!(close(pseudo_advantage(123.0, &[0.7, 0.2], 2.0), 1.4));
    assert!(close(pseudo_advantage(-5.0, &[0.0, 0.01], 1.0), 0.01));
}

#[test]
fn surrogate_fixtures() {
    assert_eq!(ppo_surrogate(1.0, 2.0, 0.25), 2.0);
    assert!(close(ppo_surrogate(1.5, -1.0, 0.25), -1.25));
    assert!(close(ppo_surrogate(0.5, 3.0, 0.25), 2.25));
}

#[test]
fn schedule_fixtures() {
    assert_eq!(nu_schedule(1.0, 0, 100), 1.0);
    assert_eq!(nu_schedule(1.0, 49, 100), 1.0);
    assert_eq!(nu_schedule(1.0, 50, 100), 2.0);
    assert_eq!(nu_schedule(1.0, 74, 100), 2.0);
    assert_eq!(nu_schedule(1.0, 75, 100), 4.0);
    assert_eq!(beta_schedule(0, 100), 0.01);
    assert_eq!(beta_schedule(50, 100), 0.02);
    assert_eq!(beta_schedule(75, 100), 0.04);
}

#[test]
fn penalty_and_multiplier_fixtures() {
    assert_eq!(penalty_cost(0.3, &[-0.1, -0.5], 10.0), 0.3);
    assert!(close(penalty_cost(0.01, &[0.02, -0.4], 0.1), 0.012));
    assert_eq!(penalty_cost(0.01, &[0.02, 0.4], 0.0), 0.01);
    assert_eq!(lagrangian_step(0.7, 0.0, 0.1), 0.7);
    assert!(close(lagrangian_step(1.0, 0.5, 0.1), 1.05));
    assert_eq!(lagrangian_step(0.01, -1.0, 0.1), 0.0);
}

#[test]
fn standardization_touches_only_selected_entries() {
    let mut x = vec![1.0, 100.0, 3.0, -7.0];
    standardize_masked(&mut x, &[true, false, true, false]);
    assert!(close(x[0], -1.0) && close(x[2], 1.0));
    assert_eq!((x[1], x[3]), (100.0, -7.0));
    let mut y = vec![2.0, 2.0];
    standardize_masked(&mut y, &[true, true]);
    assert_eq!(y, vec![0.0, 0.0]);
}

#[test]
fn modes_parse_and_print() {
    for s in [
        "dgppo",
        "penalty(0.005)",
        "penalty-schedule",
        "lagrangian(1,0.0000001)",
        "crpo-coupled-maxC",
        "crpo-coupled-C",
        "no-cbf",
        "handcrafted-cbf",
    ] {
        let m: Mode = s.parse().unwrap();
        assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
    }
    assert_eq!("lagrangian(1.0, 0.1)".parse::<Mode>().unwrap(), Mode::Lagrangian { init: 1.0, lr: 0.1 });
    for bad in ["ppo", "penalty()", "penalty(-1)", "lagrangian(1)", "penalty(0.1"] {
        assert!(bad.parse::<Mode>().is_err(), "{bad}");
    }
}

#[test]
fn slope_outside_unit_interval_is_rejected() {
    let mut cfg = AlgoConfig::default();
    assert!(cfg.validate().is_ok());
    cfg.cbf_slope = 1.2;
    assert!(cfg.validate().is_err());
    cfg.cbf_slope = 1.0;
    assert!(cfg.validate().is_err());
    cfg.cbf_slope = 0.0;
    assert!(cfg.validate().is_ok());
}

fn crowded_graphs(seed: u64) -> Vec<crate::env::ObsGraph> {
    let env = Env::new(EnvSpec::new(EnvKind::Spread, 3).with_arena_side(0.6)).unwrap();
    let s = env.reset(seed).unwrap();
    let s = env.step(&s, &[[0.4, -0.3], [-0.2, 0.6], [0.1, 0.1]]).unwrap();
    env.observe_all(&s)
}

#[test]
fn policy_loss_gradient_matches_finite_differences() {
    let net = PolicyNet::new(NetConfig::default(), 2);
    for seed in 0..10 {
        let graphs = crowded_graphs(seed);
        let mut p: ParamSet<f64> = net.init(seed);
        p.get_mut("log_std").unwrap().data_mut().copy_from_slice(&[-0.4, 0.1]);
        let batch: GraphBatch<f64> = GraphBatch::new(&graphs, 0.5, 3);
        let actions = Tensor::new(vec![3, 2], vec![0.1, -0.2, 0.3, 0.2, -0.5, 0.4]).unwrap();
        // Old log-probs shifted so some ratios sit inside and some outside the clip band.
        let mut mb = PolicyMinibatch {
            steps: vec![PolicyStep {
                batch,
                actions,
                old_log_prob: vec![0.0; 3],
                advantage: vec![0.8, -1.1, 0.4],
            }],
            initial_hidden: None,
        };
        let mut tape = Tape::new();
        let pv = tape.frozen_params(&p);
        let (lp, _) = policy_log_probs(&mut tape, &pv, &net, &mb);
        let lp = tape.value(lp[0]).data().to_vec();
        mb.steps[0].old_log_prob = vec![lp[0] - 0.1, lp[1] + 0.5, lp[2] + 0.02];
        let report = check_gradients(
            &p,
            |t, pv| Ok(policy_loss(t, pv, &net, &mb, 0.25, 0.01)?.0),
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passes(1e-3), "seed {seed}: {report:?}");
    }
}

#[test]
fn value_loss_gradients_match_finite_differences() {
    let cost = CostValueNet::new(NetConfig::default());
    let cons = ConstraintValueNet::new(NetConfig::default(), 2);
    for seed in 0..10 {
        let graphs = crowded_graphs(seed + 100);
        let batch: GraphBatch<f64> = GraphBatch::new(&graphs, 0.5, 3);
        let pool = Pooling::new(vec![0, 0, 1]);
        let pc: ParamSet<f64> = cost.init(seed);
        let r = check_gradients(
            &pc,
            |t, pv| cost_value_loss(t, pv, &cost, &batch, &pool, &[0.3, -0.2]),
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.passes(1e-3), "cost value seed {seed}: {r:?}");
        let ph: ParamSet<f64> = cons.init(seed);
        let targets = [0.1, -0.4, 0.5, -0.3, -0.2, 0.05];
        let r = check_gradients(
            &ph,
            |t, pv| constraint_value_loss(t, pv, &cons, &batch, &targets),
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.passes(1e-3), "constraint value seed {seed}: {r:?}");
    }
}

#[test]
fn value_loss_fixtures() {
    let cost = CostValueNet::new(NetConfig::default());
    let graphs = crowded_graphs(3);
    let batch: GraphBatch<f64> = GraphBatch::new(&graphs, 0.5, 3);
    let pool = Pooling::uniform(1, 3);
    let p: ParamSet<f64> = cost.init(0);
    let v = cost.eval(&p, &batch, &pool).unwrap().item();
    let loss = |targets: &[f64]| {
        let mut t = Tape::new();
        let pv = t.frozen_params(&p);
        let l = cost_value_loss(&mut t, &pv, &cost, &batch, &pool, targets).unwrap();
        t.value(l).item()
    };
    assert!(loss(&[v]).abs() < 1e-20);
    assert!(close(loss(&[v - 0.5]), 0.25));
    let mut t = Tape::new();
    let pv = t.frozen_params(&p);
    assert!(cost_value_loss(&mut t, &pv, &cost, &batch, &pool, &[0.0, 1.0]).is_err());
}

#[test]
fn policy_loss_leaves_constraint_values_untouched() {
    let policy = PolicyNet::new(NetConfig::default(), 2);
    let cons = ConstraintValueNet::new(NetConfig::default(), 2);
    let theta: ParamSet<f64> = policy.init(1);
    let psi: ParamSet<f64> = cons.init(2);
    let graphs = crowded_graphs(7);
    let env = Env::new(EnvSpec::new(EnvKind::Spread, 3).with_arena_side(0.6)).unwrap();
    let s = env.reset(7).unwrap();
    let next = env.observe_all(&env.step(&s, &[[1.0, 0.0]; 3]).unwrap());
    let now: GraphBatch<f64> = GraphBatch::new(&graphs, 0.5, 3);
    let after: GraphBatch<f64> = GraphBatch::new(&next, 0.5, 3);

    let mut tape: Tape<f64> = Tape::new();
    let tv = tape.params(&theta);
    let hv = tape.params(&psi);
    let v0 = cons.forward(&mut tape, &hv, &now);
    let v1 = cons.forward(&mut tape, &hv, &after);
    let v0 = tape.stop_gradient(v0);
    let v1 = tape.stop_gradient(v1);
    let scaled = tape.scale(v0, 0.3 - 1.0);
    let resid = tape.add(v1, scaled);
    let c_hat = tape.relu(resid);
    let c_hat = tape.max_last(c_hat);
    let advantage: Vec<f64> = tape.value(c_hat).data().iter().map(|c| 1.0 + c).collect();
    let mb = PolicyMinibatch {
        steps: vec![PolicyStep {
            batch: now.clone(),
            actions: Tensor::new(vec![3, 2], vec![0.2, 0.1, -0.3, 0.4, 0.0, -0.6]).unwrap(),
            old_log_prob: vec![-1.5; 3],
            advantage,
        }],
        initial_hidden: None,
    };
    let (loss, _) = policy_loss(&mut tape, &tv, &policy, &mb, 0.25, 0.01).unwrap();
    // Score-function form on the same tape: log π · Ĉ.
    let (lp, _) = policy_log_probs(&mut tape, &tv, &policy, &mb);
    let score = tape.mul(lp[0], c_hat);
    let score = tape.sum_all(score);
    let total = tape.add(loss, score);
    let grads = tape.backward(total).unwrap();
    for name in psi.names() {
        if let Some(g) = grads.wrt(hv.get(name)) {
            assert!(g.data().iter().all(|&x| x == 0.0), "{name} received gradient");
        }
    }
    let head = grads.wrt(tv.get("head/final/w")).expect("policy head gradient");
    assert!(head.data().iter().any(|&x| x != 0.0));
}

fn tiny(mode: &str) -> Trainer {
    let env = Env::new(EnvSpec::new(EnvKind::Target, 3).with_obstacles(1)).unwrap();
    let algo = AlgoConfig {
        mode: mode.parse().unwrap(),
        n_envs: 2,
        horizon: Some(8),
        ..AlgoConfig::default()
    };
    Trainer::new(env, NetConfig::default(), algo, 5, 4).unwrap().with_workers(1)
}

#[test]
fn ratios_are_one_before_the_first_step() {
    for gru in [false, true] {
        let env = Env::new(EnvSpec::new(EnvKind::Spread, 3)).unwrap();
        let net = NetConfig {
            gru,
            gru_chunk: 4,
            ..NetConfig::default()
        };
        let algo = AlgoConfig {
            n_envs: 2,
            horizon: Some(8),
            ..AlgoConfig::default()
        };
        let t = Trainer::new(env, net, algo, 1, 10).unwrap().with_workers(1);
        let batch = t.rollout(RolloutKind::Stochastic).unwrap();
        let prepared = t.prepare(&batch, 1.0, 0.0).unwrap();
        let units = t.shuffled_units(&batch, t.chunk_len(), 0);
        assert_eq!(units.len(), 4);
        let (mb, _) = t.policy_minibatch(&batch, &prepared, &units[0]).unwrap();
        let mut tape = Tape::new();
        let pv = tape.params(&t.state.policy);
        let (_, stats) = policy_loss(&mut tape, &pv, &t.nets().policy, &mb, 0.25, 0.01).unwrap();
        assert!(stats.max_ratio_deviation <= 1e-6, "gru={gru}: {stats:?}");
    }
}

#[test]
fn every_mode_completes_an_update() {
    for mode in [
        "dgppo",
        "penalty(0.1)",
        "penalty-schedule",
        "lagrangian(1,0.1)",
        "crpo-coupled-maxC",
        "crpo-coupled-C",
        "no-cbf",
        "handcrafted-cbf",
    ] {
        let mut t = tiny(mode);
        let r = t.update().unwrap();
        assert!(r.loss_policy.is_finite() && r.loss_vl.is_finite(), "{mode}");
        let learned = t.algo().mode.learns_constraint_values();
        assert_eq!(r.loss_vh > 0.0, learned, "{mode}: {r:?}");
        assert!((0.0..=1.0).contains(&r.frac_violating));
    }
}

#[test]
fn updates_are_deterministic() {
    let mut a = tiny("dgppo");
    let mut b = tiny("dgppo");
    for _ in 0..2 {
        assert_eq!(a.update().unwrap(), b.update().unwrap());
    }
    assert_eq!(a.state, b.state);
}

#[test]
fn zero_penalty_matches_zero_multiplier() {
    let mut a = tiny("penalty(0)");
    let mut b = tiny("lagrangian(0,0)");
    for _ in 0..2 {
        let (ra, rb) = (a.update().unwrap(), b.update().unwrap());
        assert_eq!(ra.cost_mean, rb.cost_mean);
        assert_eq!(ra.loss_policy, rb.loss_policy);
    }
    assert_eq!(a.state.policy, b.state.policy);
}

#[test]
fn reported_schedules_follow_the_step() {
    let mut t = tiny("dgppo");
    let nus: Vec<f64> = (0..4).map(|_| t.update().unwrap().nu).collect();
    assert_eq!(nus, vec![1.0, 1.0, 2.0, 4.0]);
    let mut t = tiny("penalty-schedule");
    let betas: Vec<f64> = (0..4).map(|_| t.update().unwrap().beta).collect();
    assert_eq!(betas, vec![0.01, 0.01, 0.02, 0.04]);
    assert!(t.is_done());
}

#[test]
fn multipliers_stay_nonnegative() {
    let mut t = tiny("lagrangian(0.5,0.1)");
    for _ in 0..2 {
        let r = t.update().unwrap();
        assert!(r.lambda.iter().all(|&l| l >= 0.5));
    }
}

#[test]
fn gru_horizon_must_divide_into_chunks() {
    let env = Env::new(EnvSpec::new(EnvKind::Target, 2)).unwrap();
    let net = NetConfig {
        gru: true,
        gru_chunk: 16,
        ..NetConfig::default()
    };
    let algo = AlgoConfig {
        horizon: Some(20),
        ..AlgoConfig::default()
    };
    assert!(Trainer::new(env, net, algo, 0, 1).is_err());
}

#[test]
fn handcrafted_mode_uses_constraint_functions() {
    let t = tiny("handcrafted-cbf");
    let batch = t.rollout(RolloutKind::Stochastic).unwrap();
    let prepared = t.prepare(&batch, 3.0, 0.0).unwrap();
    let n = 3;
    for (e, ep) in batch.episodes.iter().enumerate() {
        for k in 0..ep.horizon() {
            for i in 0..n {
                let c: Vec<f64> = (0..2).map(|m| dcbf_violation(ep.h[k][i][m], ep.h[k + 1][i][m], 0.3)).collect();
                if c.iter().any(|&x| x > 0.0) {
                    assert_eq!(prepared.advantage[e][k][i], pseudo_advantage(0.0, &c, 3.0));
                }
            }
        }
    }
}

#[test]
fn score_gradient_is_zero_for_constant_advantage_at_ratio_one() {
    // With every ratio at 1 and no entropy term the surrogate equals the mean
    // advantage; its θ-gradient is the mean of Ã·∇log π.
    let net = PolicyNet::new(NetConfig::default(), 2);
    let p: ParamSet<f64> = net.init(4);
    let graphs = crowded_graphs(4);
    let batch: GraphBatch<f64> = GraphBatch::new(&graphs, 0.5, 3);
    let mut mb = PolicyMinibatch {
        steps: vec![PolicyStep {
            batch,
            actions: Tensor::new(vec![3, 2], vec![0.1; 6]).unwrap(),
            old_log_prob: vec![0.0; 3],
            advantage: vec![0.0; 3],
        }],
        initial_hidden: None,
    };
    let mut tape = Tape::new();
    let pv = tape.frozen_params(&p);
    let (lp, _) = policy_log_probs(&mut tape, &pv, &net, &mb);
    mb.steps[0].old_log_prob = tape.value(lp[0]).data().to_vec();
    let (l, g) = grad(&p, |t, pv| Ok(policy_loss(t, pv, &net, &mb, 0.25, 0.0)?.0)).unwrap();
    assert_eq!(l, 0.0);
    assert_eq!(g.sq_norm(), 0.0);
}

proptest! {
    #[test]
    fn pseudo_advantage_takes_exactly_one_branch(
        a in -10.0f64..10.0,
        c0 in prop_oneof![Just(0.0), 0.0f64..2.0],
        c1 in prop_oneof![Just(0.0), 0.0f64..2.0],
        nu in 0.5f64..4.0,
    ) {
        let r = pseudo_advantage(a, &[c0, c1], nu);
        let worst = c0.max(c1);
        if worst > 0.0 {
            prop_assert_eq!(r, nu * worst);
        } else {
            prop_assert_eq!(r, a);
        }
    }

    #[test]
    fn schedules_are_monotone_with_fixed_breakpoints(total in 1u64..10_000, s in 0u64..10_000) {
        let s = s % (total + 1);
        let n0 = nu_schedule(1.0, s, total);
        let n1 = nu_schedule(1.0, (s + 1).min(total), total);
        prop_assert!(n1 >= n0);
        let b0 = beta_schedule(s, total);
        prop_assert!(b0 == 0.01 || b0 == 0.02 || b0 == 0.04);
        let frac = s as f64 / total as f64;
        let expected = if frac >= 0.75 { 4.0 } else if frac >= 0.5 { 2.0 } else { 1.0 };
        prop_assert_eq!(n0, expected);
    }

    #[test]
    fn max_backup_at_unit_lambda_is_suffix_max(h in prop::collection::vec(-1.0f64..1.0, 1..20), boot in -1.0f64..1.0) {
        let next: Vec<f64> = h[1..].iter().copied().chain([boot]).collect();
        let y = max_backup_targets(&h, &next, 1.0).unwrap();
        for k in 0..h.len() {
            let expect = h[k..].iter().copied().fold(boot, f64::max);
            prop_assert!((y[k] - expect).abs() < 1e-12);
        }
    }
}
