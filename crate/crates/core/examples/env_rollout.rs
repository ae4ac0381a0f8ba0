//! Rolls out a hand-written proportional controller in the Target task and
//! writes the trajectory as JSON lines.
//!
//! `cargo run --example env_rollout -- [n_agents] [out.jsonl]`

use dgppo::env::{write_trajectory, Env, EnvKind, EnvSpec, StepRecord};

fn main() -> dgppo::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(3, |s| s.parse().expect("n_agents"));
    let out = args.next();

    let env = Env::new(EnvSpec::new(EnvKind::Target, n))?;
    let mut state = env.reset(7)?;
    let mut records = Vec::new();
    for _ in 0..env.spec().horizon {
        // PD toward the goal: a = 2 (g − p) − 1.5 v.
        let actions: Vec<[f64; 2]> = state
            .agents
            .iter()
            .zip(&state.goals)
            .map(|(a, g)| {
                let (p, v) = (a.pos(), a.velocity());
                [2.0 * (g[0] - p[0]) - 1.5 * v[0], 2.0 * (g[1] - p[1]) - 1.5 * v[1]]
            })
            .collect();
        records.push(StepRecord::capture(&env, &state, &actions));
        state = env.step(&state, &actions)?;
    }
    records.push(StepRecord::capture(&env, &state, &[]));

    let total: f64 = records.iter().map(|r| r.cost).sum();
    let worst = records
        .iter()
        .flat_map(|r| r.h.iter().flatten())
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    println!("{n} agents, {} steps, total cost {total:.3}, max constraint value {worst:.3}", records.len() - 1);
    println!(
        "safety rate of this episode: {:.3}",
        dgppo::env::safety_rate(std::slice::from_ref(&records))
    );
    if let Some(path) = out {
        write_trajectory(path.as_ref(), &records)?;
        println!("wrote {path}");
    }
    Ok(())
}
