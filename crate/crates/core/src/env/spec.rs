use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four LiDAR tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    /// Each agent reaches its own goal.
    Target,
    /// Agents jointly cover a set of goals.
    Spread,
    /// Agents spread along the segment between two landmarks.
    Line,
    /// `Target` with kinematic bicycle agents.
    Bicycle,
}

impl EnvKind {
    pub const ALL: [EnvKind; 4] = [EnvKind::Target, EnvKind::Spread, EnvKind::Line, EnvKind::Bicycle];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Target => "target",
            EnvKind::Spread => "spread",
            EnvKind::Line => "line",
            EnvKind::Bicycle => "bicycle",
        }
    }

    /// Whether every agent is assigned its own goal.
    pub fn is_reach(self) -> bool {
        matches!(self, EnvKind::Target | EnvKind::Bicycle)
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidSpec(format!("unknown environment `{s}`")))
    }
}

/// Static description of an environment instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub n_agents: usize,
    pub arena_side: f64,
    pub dt: f64,
    pub horizon: usize,
    pub sensing_radius: f64,
    pub agent_radius: f64,
    pub n_obstacles: usize,
    pub n_rays: usize,
    pub n_hits: usize,
}

/// Maximum rejection-sampling draws per placed entity.
pub const MAX_ATTEMPTS: usize = 10_000;
pub const VELOCITY_LIMIT: f64 = 10.0;
pub const STEER_LIMIT: f64 = 1.47;
pub const ACCEL_LIMIT: f64 = 1.0;

impl EnvSpec {
    pub fn new(kind: EnvKind, n_agents: usize) -> Self {
        Self {
            kind,
            n_agents,
            arena_side: Self::default_side(n_agents),
            dt: 0.03,
            horizon: 128,
            sensing_radius: 0.5,
            agent_radius: 0.05,
            n_obstacles: 3,
            n_rays: 32,
            n_hits: 8,
        }
    }

    /// `max(1.5, 0.8·√N)`.
    pub fn default_side(n_agents: usize) -> f64 {
        (0.8 * (n_agents as f64).sqrt()).max(1.5)
    }

    pub fn with_obstacles(mut self, n: usize) -> Self {
        self.n_obstacles = n;
        self
    }

    pub fn with_arena_side(mut self, side: f64) -> Self {
        self.arena_side = side;
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("arena_side", self.arena_side),
            ("dt", self.dt),
            ("sensing_radius", self.sensing_radius),
            ("agent_radius", self.agent_radius),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidSpec(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_agents == 0 {
            return Err(Error::InvalidSpec("n_agents must be at least 1".into()));
        }
        if self.horizon == 0 || self.n_rays == 0 {
            return Err(Error::InvalidSpec("horizon and n_rays must be positive".into()));
        }
        Ok(())
    }
}
