//! Sectioned TOML run configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvKind, EnvSpec};
use crate::error::{Error, Result};
use crate::gnn::NetConfig;
use crate::learner::AlgoConfig;

/// `[env]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub name: EnvKind,
    pub n_agents: usize,
    #[serde(default)]
    pub seed: u64,
    /// Overrides the default obstacle count of 3.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_obstacles: Option<usize>,
    /// Overrides the default `max(1.5, 0.8·√N)` arena side.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arena_side: Option<f64>,
}

/// `[run]` section.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub total_updates: u64,
    pub eval_episodes: usize,
    pub output_dir: PathBuf,
    /// Record elapsed time in metrics. Off by default so that metrics files
    /// are reproducible byte for byte.
    pub wall_clock: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            total_updates: 2000,
            eval_episodes: 32,
            output_dir: PathBuf::from("runs/default"),
            wall_clock: false,
        }
    }
}

/// Complete run configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSection,
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub algo: AlgoConfig,
    #[serde(default)]
    pub run: RunSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
            .map_err(|e: Error| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    /// Environment this configuration trains on, optionally with a different
    /// number of agents.
    pub fn build_env(&self, n_agents: Option<usize>) -> Result<Env> {
        let n = n_agents.unwrap_or(self.env.n_agents);
        let mut spec = EnvSpec::new(self.env.name, n);
        if let Some(k) = self.env.n_obstacles {
            spec = spec.with_obstacles(k);
        }
        if let Some(side) = self.env.arena_side {
            spec = spec.with_arena_side(side);
        }
        if let Some(h) = self.algo.horizon {
            spec = spec.with_horizon(h);
        }
        Env::new(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.algo.validate()?;
        if self.run.total_updates == 0 || self.run.eval_episodes == 0 {
            return Err(Error::Config("total_updates and eval_episodes must be positive".into()));
        }
        self.build_env(None).map(|_| ())
    }

    /// Canonical serialized form.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// FNV-1a of the canonical form with `output_dir` blanked, so a run
    /// can be moved without invalidating its checkpoints.
    pub fn hash(&self) -> u64 {
        let mut c = self.clone();
        c.run.output_dir = PathBuf::new();
        c.run.wall_clock = false;
        fnv1a(c.to_toml().as_bytes())
    }
}

impl FromStr for RunConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            let msg = e.message().trim().to_string();
            Error::Config(match line {
                Some(l) => format!("line {l}: {msg}"),
                None => msg,
            })
        })?;
        cfg.validate().map_err(|e| {
            let msg = strip_prefix(&e);
            // Validation messages lead with the offending key.
            let key = msg.split(|c: char| !(c.is_alphanumeric() || c == '_')).next().unwrap_or("");
            match key_line(text, key) {
                Some(l) => Error::Config(format!("line {l}: {msg}")),
                None => Error::Config(msg),
            }
        })?;
        Ok(cfg)
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::InvalidSpec(m) => m.clone(),
        other => other.to_string(),
    }
}

/// 1-based line on which `key` is assigned.
fn key_line(text: &str, key: &str) -> Option<usize> {
    if key.is_empty() {
        return None;
    }
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key).is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
