//! Runs the three graph-attention networks on a batch of observations.
//!
//! `cargo run --example gnn_forward`

use dgppo::env::{Env, EnvKind, EnvSpec};
use dgppo::gnn::{attention_weights, GraphBatch, NetConfig, Pooling};
use dgppo::learner::Nets;

fn main() -> dgppo::Result<()> {
    let env = Env::new(EnvSpec::new(EnvKind::Spread, 5).with_arena_side(1.0))?;
    let state = env.reset(1)?;
    let graphs = env.observe_all(&state);

    let cfg = NetConfig::default();
    let nets = Nets::new(&cfg);
    let policy = nets.policy.init(0);
    let cost_value = nets.cost_value.init(1);
    let constraint_value = nets.constraint_value.init(2);
    println!(
        "parameters: policy {}, cost value {}, constraint value {}",
        policy.numel(),
        cost_value.numel(),
        constraint_value.numel()
    );

    let batch: GraphBatch = GraphBatch::new(&graphs, env.spec().sensing_radius, cfg.heads);
    let out = nets.policy.eval(&policy, &batch, None)?;
    let values = nets.constraint_value.eval(&constraint_value, &batch)?;
    let joint = nets.cost_value.eval(&cost_value, &batch, &Pooling::uniform(1, graphs.len()))?;
    for (i, g) in graphs.iter().enumerate() {
        println!(
            "agent {i}: {} nodes, action mean {:?}, constraint values {:?}",
            g.nodes.len(),
            out.mean.row(i),
            values.row(i)
        );
    }
    println!("policy log-std {:?}", out.log_std.data());
    println!("joint cost value {:.4}", joint.item());

    let weights = attention_weights(&policy, &cfg, cfg.policy_layers, &batch)?;
    let first = &weights[0];
    let rows: Vec<usize> = (0..batch.rows()).filter(|&r| batch.segment[r] == 0).collect();
    println!("agent 0 attention, layer 0, head 0:");
    for r in rows {
        println!("  sender row {r}: {:.4}", first.data()[r * cfg.heads]);
    }
    Ok(())
}
