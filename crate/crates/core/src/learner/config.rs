use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Training algorithm and its ablations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// Decoupled pseudo-advantage with learned constraint values.
    Dgppo,
    /// PPO on `l + β·max{0, max h}`.
    Penalty { beta: f64 },
    /// `Penalty` with β starting at 0.01 and doubling at 50% and 75%.
    PenaltySchedule,
    /// PPO with per-constraint multipliers updated by dual ascent.
    Lagrangian { init: f64, lr: f64 },
    /// Batch-level switching on `max_m Ĉ`.
    CrpoCoupledMaxC,
    /// Batch-level switching on the raw residual `C`.
    CrpoCoupledC,
    /// `Ĉ := max{0, h(o⁺)}`, no learned constraint values.
    NoCbf,
    /// Constraint values replaced by `h` itself.
    HandcraftedCbf,
}

impl Mode {
    /// Whether the learned constraint-value network is trained and used.
    pub fn learns_constraint_values(self) -> bool {
        matches!(self, Mode::Dgppo | Mode::CrpoCoupledMaxC | Mode::CrpoCoupledC)
    }

    /// Whether the policy update uses the constraint branch at all.
    pub fn uses_violation_branch(self) -> bool {
        matches!(
            self,
            Mode::Dgppo | Mode::CrpoCoupledMaxC | Mode::CrpoCoupledC | Mode::NoCbf | Mode::HandcraftedCbf
        )
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Dgppo => write!(f, "dgppo"),
            Mode::Penalty { beta } => write!(f, "penalty({beta})"),
            Mode::PenaltySchedule => write!(f, "penalty-schedule"),
            Mode::Lagrangian { init, lr } => write!(f, "lagrangian({init},{lr})"),
            Mode::CrpoCoupledMaxC => write!(f, "crpo-coupled-maxC"),
            Mode::CrpoCoupledC => write!(f, "crpo-coupled-C"),
            Mode::NoCbf => write!(f, "no-cbf"),
            Mode::HandcraftedCbf => write!(f, "handcrafted-cbf"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    /// Parses `dgppo`, `penalty(0.1)`, `lagrangian(1.0,1e-7)`, and the bare
    /// ablation names.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("unknown mode `{s}`"));
        let args = |name: &str| -> Option<Vec<f64>> {
            let inner = s.strip_prefix(name)?.strip_prefix('(')?.strip_suffix(')')?;
            inner.split(',').map(|a| a.trim().parse::<f64>().ok()).collect()
        };
        let mode = match s {
            "dgppo" => Mode::Dgppo,
            "penalty-schedule" => Mode::PenaltySchedule,
            "crpo-coupled-maxC" => Mode::CrpoCoupledMaxC,
            "crpo-coupled-C" => Mode::CrpoCoupledC,
            "no-cbf" => Mode::NoCbf,
            "handcrafted-cbf" => Mode::HandcraftedCbf,
            _ => {
                if let Some(a) = args("penalty") {
                    match a.as_slice() {
                        [beta] if *beta >= 0.0 => Mode::Penalty { beta: *beta },
                        _ => return Err(bad()),
                    }
                } else if let Some(a) = args("lagrangian") {
                    match a.as_slice() {
                        [init, lr] if *init >= 0.0 && *lr >= 0.0 => Mode::Lagrangian { init: *init, lr: *lr },
                        _ => return Err(bad()),
                    }
                } else {
                    return Err(bad());
                }
            }
        };
        Ok(mode)
    }
}

impl Serialize for Mode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which rollout stream supplies constraint-value regression targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VhRollout {
    Deterministic,
    Stochastic,
}

/// What closes the constraint-value targets at the end of an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VhBootstrap {
    /// `h(oᵀ)`: targets are the maximum of observed constraint values.
    Constraint,
    /// The current network's `V(oᵀ)`.
    Value,
}

/// Optimization hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlgoConfig {
    pub mode: Mode,
    pub vh_rollout: VhRollout,
    pub gamma: f64,
    pub gae_lambda: f64,
    /// λ of the max-backup constraint-value targets.
    pub vh_lambda: f64,
    pub vh_bootstrap: VhBootstrap,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub ppo_epochs: usize,
    pub minibatches: usize,
    /// Slope `a` of the linear class-κ function `α(r) = a·r`.
    pub cbf_slope: f64,
    /// Initial constraint-step weight ν.
    pub nu: f64,
    pub lr_policy: f64,
    pub lr_cost_value: f64,
    pub lr_constraint_value: f64,
    pub max_grad_norm: f64,
    /// Parallel environment instances per update.
    pub n_envs: usize,
    /// Episode length; `None` keeps the environment default.
    pub horizon: Option<usize>,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Dgppo,
            vh_rollout: VhRollout::Deterministic,
            gamma: 0.99,
            gae_lambda: 0.95,
            vh_lambda: 1.0,
            vh_bootstrap: VhBootstrap::Constraint,
            clip_eps: 0.25,
            entropy_coef: 0.01,
            ppo_epochs: 1,
            minibatches: 4,
            cbf_slope: 0.3,
            nu: 1.0,
            lr_policy: 3e-4,
            lr_cost_value: 1e-3,
            lr_constraint_value: 3e-4,
            max_grad_norm: 2.0,
            n_envs: 128,
            horizon: None,
        }
    }
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in (0, 1], got {v}")))
            }
        };
        unit("gamma", self.gamma)?;
        unit("gae_lambda", self.gae_lambda)?;
        if !(0.0..=1.0).contains(&self.vh_lambda) {
            return Err(Error::Config(format!("vh_lambda must lie in [0, 1], got {}", self.vh_lambda)));
        }
        if !(0.0..1.0).contains(&self.cbf_slope) {
            return Err(Error::Config(format!(
                "cbf_slope must lie in [0, 1) for a valid class-κ function, got {}",
                self.cbf_slope
            )));
        }
        if self.clip_eps <= 0.0 || self.nu <= 0.0 {
            return Err(Error::Config("clip_eps and nu must be positive".into()));
        }
        if self.ppo_epochs == 0 || self.minibatches == 0 || self.n_envs == 0 {
            return Err(Error::Config("ppo_epochs, minibatches and n_envs must be positive".into()));
        }
        if self.horizon == Some(0) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(())
    }
}
