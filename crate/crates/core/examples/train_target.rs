//! Trains DGPPO on the three-agent Target task through the library API and
//! reports periodic deterministic evaluations.
//!
//! `cargo run --release --example train_target -- [updates] [seed] [mode] [n_envs]`
//!
//! `mode` is any algorithm mode string, e.g. `dgppo`, `penalty(0.05)`,
//! `handcrafted-cbf`.

use std::time::Instant;

use dgppo::env::{Env, EnvKind, EnvSpec};
use dgppo::gnn::NetConfig;
use dgppo::learner::{AlgoConfig, Trainer};

fn main() -> dgppo::Result<()> {
    let mut args = std::env::args().skip(1);
    let updates: u64 = args.next().map_or(500, |s| s.parse().expect("updates"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let mode = args.next().unwrap_or_else(|| "dgppo".into()).parse()?;
    let n_envs: usize = args.next().map_or(4, |s| s.parse().expect("n_envs"));

    let env = Env::new(EnvSpec::new(EnvKind::Target, 3).with_obstacles(0))?;
    let algo = AlgoConfig {
        mode,
        n_envs,
        ..AlgoConfig::default()
    };
    let mut trainer = Trainer::new(env, NetConfig::default(), algo, seed, updates)?;
    let start = trainer.evaluate(32, 0)?;
    println!("update     0: cost {:.3} safety {:.3}", start.cost_mean, start.safety_rate);

    let clock = Instant::now();
    let every = (updates / 10).max(1);
    while !trainer.is_done() {
        let r = trainer.update()?;
        if (r.step + 1) % every == 0 {
            let e = trainer.evaluate(32, 0)?;
            println!(
                "update {:5}: cost {:.3} safety {:.3}  (train cost {:.3}, violating {:.3}, nu {}) {:.0}s",
                r.step + 1,
                e.cost_mean,
                e.safety_rate,
                r.cost_mean,
                r.frac_violating,
                r.nu,
                clock.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}
