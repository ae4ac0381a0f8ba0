use std::path::Path;

use dgppo::cli::checkpoint;
use dgppo::cli::metrics::read_metrics;
use dgppo::cli::{eval_checkpoint, plot, train, EvalOptions, RunConfig, METRICS_FILE};
use dgppo::env::{read_trajectory, safety_rate, write_trajectory, StepRecord};

fn tiny(dir: &Path, updates: u64) -> RunConfig {
    let mut cfg: RunConfig = format!(
        r#"
        [env]
        name = "target"
        n_agents = 3
        seed = 4
        n_obstacles = 1

        [algo]
        n_envs = 2
        horizon = 12

        [run]
        total_updates = {updates}
        eval_episodes = 2
        "#
    )
    .parse()
    .unwrap();
    cfg.run.output_dir = dir.to_path_buf();
    cfg
}

#[test]
fn empty_sections_yield_frozen_defaults() {
    let cfg: RunConfig = "[env]\nname = \"target\"\nn_agents = 3\n[net]\n[algo]\n".parse().unwrap();
    let frozen = include_str!("fixtures/default_config.toml");
    assert_eq!(cfg.to_toml(), frozen);
}

#[test]
fn invalid_configs_report_the_line() {
    let err = "[env]\nname = \"target\"\nn_agents = 3\n\n[algo]\ncbf_slope = 1.2\n"
        .parse::<RunConfig>()
        .unwrap_err()
        .to_string();
    assert!(err.contains("line 6") && err.contains("cbf_slope"), "{err}");
    let err = "[env]\nname = \"target\"\nn_agents = 3\n[run]\nepochs = 3\n"
        .parse::<RunConfig>()
        .unwrap_err()
        .to_string();
    assert!(err.contains("line 5") && err.contains("epochs"), "{err}");
    assert!("[env]\nname = \"maze\"\nn_agents = 3\n".parse::<RunConfig>().is_err());
}

#[test]
fn identical_runs_write_identical_metrics() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    train(&tiny(a.path(), 4), None).unwrap();
    train(&tiny(b.path(), 4), None).unwrap();
    let ma = std::fs::read(a.path().join(METRICS_FILE)).unwrap();
    let mb = std::fs::read(b.path().join(METRICS_FILE)).unwrap();
    assert!(!ma.is_empty());
    assert_eq!(ma, mb);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let full = train(&tiny(a.path(), 10), None).unwrap();
    let cfg = tiny(b.path(), 10);
    let part = train(&cfg, Some(4)).unwrap();
    assert_eq!(part.step, 4);
    assert!(part.final_eval.is_none());
    // Simulate a crash after the last checkpoint: a stray extra record.
    let stray = std::fs::read_to_string(b.path().join(METRICS_FILE)).unwrap();
    let last = stray.lines().last().unwrap().replace("\"step\":3", "\"step\":4");
    std::fs::write(b.path().join(METRICS_FILE), format!("{stray}{last}\n")).unwrap();
    let resumed = train(&cfg, None).unwrap();
    assert_eq!(resumed.resumed_from, Some(4));
    assert_eq!(resumed.final_eval, full.final_eval);
    assert_eq!(
        std::fs::read(a.path().join(METRICS_FILE)).unwrap(),
        std::fs::read(b.path().join(METRICS_FILE)).unwrap()
    );
    let ca = checkpoint::load(&checkpoint::path_for(a.path(), 10)).unwrap();
    let cb = checkpoint::load(&checkpoint::path_for(b.path(), 10)).unwrap();
    assert_eq!(ca.state, cb.state);
}

#[test]
fn checkpoints_every_tenth_and_reject_other_configs() {
    let dir = tempfile::tempdir().unwrap();
    train(&tiny(dir.path(), 20), None).unwrap();
    let steps: Vec<u64> = checkpoint::list(dir.path()).unwrap().into_iter().map(|(s, _)| s).collect();
    assert_eq!(steps, (1..=10).map(|k| 2 * k).collect::<Vec<_>>());
    let mut other = tiny(dir.path(), 20);
    other.algo.cbf_slope = 0.5;
    assert!(train(&other, None).is_err());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), 3);
    train(&cfg, None).unwrap();
    let path = checkpoint::path_for(dir.path(), 3);
    let bytes = std::fs::read(&path).unwrap();
    let ck = checkpoint::decode(&bytes).unwrap();
    assert_eq!(ck.config, cfg);
    assert_eq!(ck.state.step, 3);
    assert_eq!(ck.state.policy_adam.t, 3 * cfg.algo.minibatches as u64);
    assert_eq!(checkpoint::encode(&ck.config, &ck.state), bytes);
    let again = checkpoint::decode(&checkpoint::encode(&ck.config, &ck.state)).unwrap();
    for (a, b) in [
        (&ck.state.policy, &again.state.policy),
        (&ck.state.constraint_value_adam.v, &again.state.constraint_value_adam.v),
    ] {
        for ((na, ta), (nb, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(na, nb);
            let bits = |t: &dgppo::diffmath::Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(ta), bits(tb));
        }
    }

    let mut corrupt = bytes.clone();
    let i = corrupt.len() - 10;
    corrupt[i] ^= 0x40;
    assert!(checkpoint::decode(&corrupt).unwrap_err().contains("CRC"));
    assert!(checkpoint::decode(&bytes[..bytes.len() - 1]).is_err());
    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(checkpoint::decode(&wrong_magic).is_err());
}

#[test]
fn diverging_training_checkpoints_and_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), 10);
    cfg.algo.lr_policy = 1e37;
    cfg.algo.lr_cost_value = 1e37;
    cfg.algo.lr_constraint_value = 1e37;
    let err = train(&cfg, None).unwrap_err();
    let aborts: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("abort_"))
        .collect();
    assert_eq!(aborts.len(), 1, "error was {err}");
    let ck = checkpoint::load(&aborts[0].path()).unwrap();
    assert!(ck.state.policy.is_finite());
}

#[test]
fn static_policy_has_unit_safety_and_constant_cost() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), 1);
    cfg.env.n_obstacles = Some(0);
    train(&cfg, None).unwrap();
    let mut ck = checkpoint::load(&checkpoint::path_for(dir.path(), 1)).unwrap();
    for (name, t) in ck.state.policy.iter_mut() {
        if name.starts_with("head/final") {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let traj = dir.path().join("traj");
    let opts = EvalOptions {
        episodes: 3,
        trajectories: Some(traj.clone()),
        ..EvalOptions::default()
    };
    let s = eval_checkpoint(&ck, &opts).unwrap();
    assert_eq!(s.safety_rate, 1.0);
    let mut totals = Vec::new();
    for e in 0..3 {
        let r = read_trajectory(&traj.join(format!("episode_{e:03}.jsonl"))).unwrap();
        assert_eq!(r.len(), 13);
        assert!(r.iter().all(|x| x.positions == r[0].positions));
        let per_step = r[0].cost;
        assert!(r[..12].iter().all(|x| x.cost == per_step));
        totals.push(12.0 * per_step);
    }
    let mean = totals.iter().sum::<f64>() / 3.0;
    assert!((s.cost_mean - mean).abs() < 1e-9, "{} vs {mean}", s.cost_mean);
    assert_eq!(eval_checkpoint(&ck, &opts).unwrap(), s);
}

#[test]
fn eval_generalizes_to_more_agents() {
    let dir = tempfile::tempdir().unwrap();
    train(&tiny(dir.path(), 1), None).unwrap();
    let ck = checkpoint::load(&checkpoint::path_for(dir.path(), 1)).unwrap();
    let s = eval_checkpoint(
        &ck,
        &EvalOptions {
            episodes: 2,
            n_agents: Some(6),
            ..EvalOptions::default()
        },
    )
    .unwrap();
    assert_eq!(s.n_agents, 6);
}

fn record(k: usize, h: [[f64; 2]; 3]) -> StepRecord {
    StepRecord {
        k,
        positions: vec![[0.0, 0.0]; 3],
        velocities: vec![[0.0, 0.0]; 3],
        actions: vec![[0.0, 0.0]; 3],
        cost: 0.0,
        h: h.to_vec(),
    }
}

#[test]
fn crafted_trajectory_with_one_collision_has_two_thirds_safety() {
    let safe = [[-0.3, -0.45]; 3];
    let mut hit = safe;
    hit[1][0] = 0.02;
    let records = vec![record(0, safe), record(1, hit), record(2, safe)];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.jsonl");
    write_trajectory(&path, &records).unwrap();
    let back = read_trajectory(&path).unwrap();
    assert_eq!(back, records);
    assert!((safety_rate(&[back]) - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn plot_tables_and_aggregates() {
    let run = tempfile::tempdir().unwrap();
    train(&tiny(run.path(), 5), None).unwrap();
    let metrics = run.path().join(METRICS_FILE);
    let out = tempfile::tempdir().unwrap();

    let single = plot(std::slice::from_ref(&metrics), out.path()).unwrap();
    let rows = std::fs::read_to_string(&single.run_csvs[0]).unwrap().lines().count() - 1;
    assert_eq!(rows, read_metrics(&metrics).unwrap().records.len());
    assert_eq!(rows, 5);

    let copies = vec![metrics.clone(); 3];
    let agg = plot(&copies, out.path()).unwrap();
    let run_csv = std::fs::read_to_string(&agg.run_csvs[0]).unwrap();
    let agg_csv = std::fs::read_to_string(&agg.aggregate_csv).unwrap();
    assert!(agg_csv.starts_with("step,runs,cost_mean,cost_std,safety_rate_mean,safety_rate_std"));
    for (r, a) in run_csv.lines().skip(1).zip(agg_csv.lines().skip(1)) {
        let r: Vec<&str> = r.split(',').collect();
        let a: Vec<&str> = a.split(',').collect();
        assert_eq!(a[0], r[0]);
        assert_eq!(a[1], "3");
        assert_eq!(a[2].parse::<f64>().unwrap(), r[1].parse::<f64>().unwrap());
        assert_eq!(a[3].parse::<f64>().unwrap(), 0.0);
        assert_eq!(a[4].parse::<f64>().unwrap(), r[3].parse::<f64>().unwrap());
    }
    for svg in &agg.svgs {
        assert!(std::fs::read_to_string(svg).unwrap().starts_with("<svg"));
    }

    let noisy = out.path().join("noisy.jsonl");
    let text = std::fs::read_to_string(&metrics).unwrap();
    std::fs::write(&noisy, format!("not json\n{text}{{\"step\": 1}}\n")).unwrap();
    let o = plot(&[noisy], out.path()).unwrap();
    assert_eq!(o.skipped_lines, 2);

    assert!(plot(&[], out.path()).is_err());
}

#[test]
fn command_line_exit_codes() {
    assert_eq!(dgppo::cli::run(["dgppo", "plot", "--out", "x"]), 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[env]\nname = \"target\"\nn_agents = 3\n[algo]\ncbf_slope = 1.2\n").unwrap();
    assert_eq!(dgppo::cli::run(["dgppo", "train", "--config", cfg.to_str().unwrap()]), 1);
}
