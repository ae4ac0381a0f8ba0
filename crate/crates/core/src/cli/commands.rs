//! `train`, `eval` and `verify`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::checkpoint::{self, Checkpoint};
use super::config::RunConfig;
use super::metrics::{MetricsRecord, MetricsWriter};
use crate::diffmath::ParamSet;
use crate::env::{safety_rate, write_trajectory, StepRecord};
use crate::error::{Error, Result};
use crate::learner::{summarize, EvalSummary, Nets, Trainer};
use crate::oracles::suite::{run_suite, SuiteConfig, SuiteReport};
use crate::rollout::{collect, RolloutConfig, RolloutKind};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_EVAL_FILE: &str = "final_eval.json";
/// Evaluation seed used for the end-of-training summary and as the `eval`
/// default, so the two agree.
pub const DEFAULT_EVAL_SEED: u64 = 0;

/// Result of a `train` invocation.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    /// Step of the checkpoint training resumed from.
    pub resumed_from: Option<u64>,
    pub step: u64,
    /// Present once all updates are done.
    pub final_eval: Option<EvalSummary>,
}

/// Applies command-line overrides to a loaded configuration.
pub fn apply_overrides(mut cfg: RunConfig, seed: Option<u64>, out: Option<PathBuf>) -> RunConfig {
    if let Some(s) = seed {
        cfg.env.seed = s;
    }
    if let Some(o) = out {
        cfg.run.output_dir = o;
    }
    cfg
}

/// Trains `cfg` into `cfg.run.output_dir`, resuming from the newest
/// checkpoint there. `stop_after` ends the process early after that many
/// completed updates, as an interruption would.
pub fn train(cfg: &RunConfig, stop_after: Option<u64>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dir = cfg.run.output_dir.clone();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let cfg_path = dir.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;

    let total = cfg.run.total_updates;
    let mut trainer = Trainer::new(cfg.build_env(None)?, cfg.net.clone(), cfg.algo.clone(), cfg.env.seed, total)?;
    let mut resumed_from = None;
    if let Some((step, path)) = checkpoint::list(&dir)?.pop() {
        let ck = checkpoint::load(&path)?;
        if ck.config.hash() != cfg.hash() {
            return Err(Error::Checkpoint {
                path,
                reason: "written by a different configuration; use another --out".into(),
            });
        }
        trainer.state = ck.state;
        resumed_from = Some(step);
    }
    let mut metrics = MetricsWriter::resume(&dir.join(METRICS_FILE), trainer.state.step)?;
    let interval = (total / 10).max(1);
    let start = Instant::now();
    while !trainer.is_done() {
        if stop_after.is_some_and(|s| trainer.state.step >= s) {
            return Ok(TrainOutcome {
                out_dir: dir,
                resumed_from,
                step: trainer.state.step,
                final_eval: None,
            });
        }
        let before = trainer.state.clone();
        let report = match trainer.update() {
            Ok(r) => r,
            Err(e) => {
                let path = dir.join(format!("abort_{:08}.bin", before.step));
                checkpoint::save(&path, cfg, &before)?;
                return Err(e);
            }
        };
        metrics.write(&MetricsRecord {
            report,
            wall_ms: cfg.run.wall_clock.then(|| start.elapsed().as_millis() as u64),
        })?;
        let step = trainer.state.step;
        if step % interval == 0 || step == total {
            checkpoint::save(&checkpoint::path_for(&dir, step), cfg, &trainer.state)?;
        }
    }
    let summary = trainer.evaluate(cfg.run.eval_episodes, DEFAULT_EVAL_SEED)?;
    let path = dir.join(FINAL_EVAL_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|e| Error::io(&path, e))?;
    Ok(TrainOutcome {
        out_dir: dir,
        resumed_from,
        step: trainer.state.step,
        final_eval: Some(summary),
    })
}

/// `eval` settings.
#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub episodes: usize,
    pub seed: u64,
    pub n_agents: Option<usize>,
    /// Directory receiving one trajectory file per episode.
    pub trajectories: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            episodes: 32,
            seed: DEFAULT_EVAL_SEED,
            n_agents: None,
            trajectories: None,
        }
    }
}

fn check_layout(what: &str, expected: &ParamSet, got: &ParamSet) -> Result<()> {
    let shapes = |p: &ParamSet| p.iter().map(|(k, t)| (k.to_string(), t.shape().to_vec())).collect::<Vec<_>>();
    if shapes(expected) != shapes(got) {
        return Err(Error::Config(format!(
            "checkpoint {what} parameters do not match the network configuration"
        )));
    }
    Ok(())
}

/// Deterministic evaluation of a loaded checkpoint.
pub fn eval_checkpoint(ck: &Checkpoint, opts: &EvalOptions) -> Result<EvalSummary> {
    let env = ck.config.build_env(opts.n_agents)?;
    let nets = Nets::new(&ck.config.net);
    check_layout("policy", &nets.policy.init(0), &ck.state.policy)?;
    let batch = collect(
        &env,
        &nets.policy,
        &ck.state.policy,
        &RolloutConfig {
            n_envs: opts.episodes,
            horizon: env.spec().horizon,
            seed: opts.seed,
            kind: RolloutKind::Deterministic,
            workers: None,
        },
    )?;
    let summary = summarize(&batch);
    let records: Vec<Vec<StepRecord>> = batch.episodes.iter().map(|ep| ep.records(&env)).collect();
    let recomputed = safety_rate(&records);
    if recomputed != summary.safety_rate {
        return Err(Error::Invalid(format!(
            "safety rate {} disagrees with the trajectory recomputation {recomputed}",
            summary.safety_rate
        )));
    }
    if let Some(dir) = &opts.trajectories {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (e, r) in records.iter().enumerate() {
            write_trajectory(&dir.join(format!("episode_{e:03}.jsonl")), r)?;
        }
    }
    Ok(summary)
}

pub fn eval(path: &Path, opts: &EvalOptions) -> Result<EvalSummary> {
    eval_checkpoint(&checkpoint::load(path)?, opts)
}

/// Full oracle suite, including finite-difference checks.
pub fn verify() -> Result<SuiteReport> {
    run_suite(&SuiteConfig::default())
}

/// `verify` output document.
#[derive(Serialize)]
pub struct VerifyDocument<'a> {
    pub first_failure: Option<&'a str>,
    #[serde(flatten)]
    pub report: &'a SuiteReport,
}
