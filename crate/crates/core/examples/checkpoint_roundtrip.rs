//! Trains briefly through the command layer, then reloads the checkpoint,
//! checks it bit for bit and evaluates it on a larger team.
//!
//! `cargo run --release --example checkpoint_roundtrip`

use dgppo::cli::checkpoint;
use dgppo::cli::{eval_checkpoint, train, EvalOptions, RunConfig};

fn main() -> dgppo::Result<()> {
    let dir = std::env::temp_dir().join("dgppo_checkpoint_example");
    let _ = std::fs::remove_dir_all(&dir);
    let mut cfg: RunConfig = r#"
        [env]
        name = "target"
        n_agents = 3
        n_obstacles = 0

        [algo]
        n_envs = 2
        horizon = 32

        [run]
        total_updates = 10
        eval_episodes = 4
    "#
    .parse()?;
    cfg.run.output_dir = dir.clone();
    let outcome = train(&cfg, None)?;
    println!("trained {} updates into {}", outcome.step, dir.display());

    let (step, path) = checkpoint::list(&dir)?.pop().expect("final checkpoint");
    let bytes = std::fs::read(&path).map_err(|e| dgppo::Error::Invalid(e.to_string()))?;
    let ck = checkpoint::decode(&bytes).map_err(dgppo::Error::Invalid)?;
    println!("{}: step {step}, {} bytes, {} policy tensors", path.display(), bytes.len(), ck.state.policy.len());
    assert_eq!(checkpoint::encode(&ck.config, &ck.state), bytes, "re-encoding is not byte-identical");

    let mut corrupt = bytes.clone();
    let i = corrupt.len() - 16;
    corrupt[i] ^= 1;
    println!("flipped body bit: {}", checkpoint::decode(&corrupt).unwrap_err());

    for n in [3, 8] {
        let s = eval_checkpoint(
            &ck,
            &EvalOptions {
                episodes: 4,
                n_agents: Some(n),
                ..EvalOptions::default()
            },
        )?;
        println!("eval with {n} agents: cost {:.3} ± {:.3}, safety {:.3}", s.cost_mean, s.cost_std, s.safety_rate);
    }
    Ok(())
}
