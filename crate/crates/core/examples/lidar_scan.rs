//! Prints one agent's LiDAR returns and the resulting observation graph.
//!
//! `cargo run --example lidar_scan -- [seed]`

use dgppo::env::{Env, EnvKind, EnvSpec};

fn main() -> dgppo::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(3, |s| s.parse().expect("seed"));
    let env = Env::new(EnvSpec::new(EnvKind::Target, 4).with_obstacles(6))?;
    let state = env.reset(seed)?;

    for (o, obs) in state.obstacles.iter().enumerate() {
        println!("obstacle {o}: {obs:?}");
    }
    let me = state.agents[0].pos();
    println!("agent 0 at ({:.3}, {:.3})", me[0], me[1]);
    let hits = env.lidar(&state, 0);
    for h in &hits {
        println!("  ray {:2}  distance {:.4}  point ({:.3}, {:.3})", h.ray, h.distance, h.point[0], h.point[1]);
    }
    if hits.is_empty() {
        println!("  no returns within the sensing radius");
    }

    let g = env.observe(&state, 0);
    println!("observation graph: {} nodes", g.nodes.len());
    for (j, node) in g.nodes.iter().enumerate() {
        println!("  {j}: {:?} edge {:?}", node.kind, g.edge_feature(j).map(|x| (x * 1e3).round() / 1e3));
    }
    let h = env.constraints(&g);
    println!("constraint values: agent {:.4}, obstacle {:.4}", h[0], h[1]);
    Ok(())
}
