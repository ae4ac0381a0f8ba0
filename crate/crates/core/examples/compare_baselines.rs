//! Trains several algorithm modes with the same budget and prints their
//! final cost and safety rate side by side.
//!
//! `cargo run --release --example compare_baselines -- [updates] [seed]`

use dgppo::env::{Env, EnvKind, EnvSpec};
use dgppo::gnn::NetConfig;
use dgppo::learner::{AlgoConfig, Mode, Trainer};

fn main() -> dgppo::Result<()> {
    let mut args = std::env::args().skip(1);
    let updates: u64 = args.next().map_or(300, |s| s.parse().expect("updates"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let modes = ["dgppo", "penalty(0.005)", "penalty(1)", "lagrangian(0,0.1)", "handcrafted-cbf", "no-cbf"];

    let env = Env::new(EnvSpec::new(EnvKind::Target, 3).with_obstacles(0))?;
    println!("{:<20} {:>8} {:>8}", "mode", "cost", "safety");
    for m in modes {
        let mode: Mode = m.parse()?;
        let algo = AlgoConfig {
            mode,
            n_envs: 4,
            ..AlgoConfig::default()
        };
        let mut t = Trainer::new(env.clone(), NetConfig::default(), algo, seed, updates)?;
        while !t.is_done() {
            t.update()?;
        }
        let e = t.evaluate(32, 0)?;
        println!("{:<20} {:>8.3} {:>8.3}", m, e.cost_mean, e.safety_rate);
    }
    Ok(())
}
