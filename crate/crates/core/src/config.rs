//! Environment/policy selection shared by the CLI and the C API, plus the
//! optional TOML config file that seeds flag defaults.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::env::{
    ChainEnv, Environment, MountainCar, PuddleWorld, ReturnDistribution, SyntheticEnv,
};
use crate::policy::{EnergyPumpingPolicy, FixedActionPolicy, Policy, UniformPolicy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown environment '{0}'")]
    UnknownEnv(String),
    #[error("unknown policy '{0}'")]
    UnknownPolicy(String),
    #[error("{0}")]
    Invalid(String),
    #[error("config file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Chain,
    CyclicChain,
    MountainCar,
    PuddleWorld,
    Constant,
    Bernoulli,
    Uniform,
}

impl EnvKind {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "chain" => EnvKind::Chain,
            "cyclic-chain" | "cyclic_chain" => EnvKind::CyclicChain,
            "mountain-car" | "mountain_car" => EnvKind::MountainCar,
            "puddle-world" | "puddle_world" => EnvKind::PuddleWorld,
            "constant" => EnvKind::Constant,
            "bernoulli" => EnvKind::Bernoulli,
            "uniform" => EnvKind::Uniform,
            other => return Err(ConfigError::UnknownEnv(other.into())),
        })
    }

    /// Benchmark tasks are the ones whose small-epsilon experiment cells are
    /// gated behind --allow-long.
    pub fn is_benchmark(&self) -> bool {
        matches!(self, EnvKind::MountainCar | EnvKind::PuddleWorld)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Uniform,
    EnergyPumping,
    Fixed,
}

impl PolicyKind {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "uniform" => PolicyKind::Uniform,
            "energy-pumping" | "energy_pumping" => PolicyKind::EnergyPumping,
            "fixed" => PolicyKind::Fixed,
            other => return Err(ConfigError::UnknownPolicy(other.into())),
        })
    }
}

/// Environment parameters; unset fields fall back to the built-in defaults.
#[derive(Debug, Clone, Default)]
pub struct EnvParams {
    pub gamma: Option<f64>,
    pub chain_states: Option<usize>,
    pub dist_value: Option<f64>,
    pub dist_p: Option<f64>,
    pub dist_lo: Option<f64>,
    pub dist_hi: Option<f64>,
}

pub fn build_env(kind: EnvKind, params: &EnvParams) -> Result<Box<dyn Environment>, ConfigError> {
    let err = |e: crate::env::EnvError| ConfigError::Invalid(e.to_string());
    Ok(match kind {
        EnvKind::Chain => {
            let n = params.chain_states.unwrap_or(6);
            let gamma = params.gamma.unwrap_or(0.9);
            Box::new(ChainEnv::episodic(n, gamma).map_err(err)?)
        }
        EnvKind::CyclicChain => {
            let n = params.chain_states.unwrap_or(5);
            let gamma = params.gamma.unwrap_or(0.9);
            Box::new(ChainEnv::cyclic(n, gamma).map_err(err)?)
        }
        EnvKind::MountainCar => Box::new(MountainCar::new()),
        EnvKind::PuddleWorld => Box::new(PuddleWorld::new()),
        EnvKind::Constant => {
            let v = params.dist_value.unwrap_or(0.6561);
            Box::new(SyntheticEnv::new(ReturnDistribution::Constant(v)).map_err(err)?)
        }
        EnvKind::Bernoulli => {
            let p = params.dist_p.unwrap_or(0.5);
            Box::new(SyntheticEnv::new(ReturnDistribution::Bernoulli(p)).map_err(err)?)
        }
        EnvKind::Uniform => {
            let lo = params.dist_lo.unwrap_or(0.0);
            let hi = params.dist_hi.unwrap_or(1.0);
            Box::new(SyntheticEnv::new(ReturnDistribution::Uniform(lo, hi)).map_err(err)?)
        }
    })
}

/// The benchmark's canonical policy when none is requested: energy pumping
/// with 60% random actions on Mountain Car, uniform elsewhere.
pub fn default_policy_kind(env: EnvKind) -> PolicyKind {
    match env {
        EnvKind::MountainCar => PolicyKind::EnergyPumping,
        _ => PolicyKind::Uniform,
    }
}

pub fn build_policy(
    kind: PolicyKind,
    env: &dyn Environment,
    mixing: Option<f64>,
    fixed_action: Option<usize>,
) -> Result<Box<dyn Policy>, ConfigError> {
    let actions = env.spec().action_count;
    Ok(match kind {
        PolicyKind::Uniform => Box::new(UniformPolicy::new(actions)),
        PolicyKind::EnergyPumping => {
            if actions != EnergyPumpingPolicy::ACTIONS || env.spec().state_dim != 2 {
                return Err(ConfigError::Invalid(format!(
                    "energy-pumping needs a 2-dimensional 3-action environment, '{}' is not",
                    env.id()
                )));
            }
            Box::new(
                EnergyPumpingPolicy::new(mixing.unwrap_or(0.6))
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            )
        }
        PolicyKind::Fixed => {
            let action = fixed_action.unwrap_or(actions - 1);
            if action >= actions {
                return Err(ConfigError::Invalid(format!(
                    "fixed action {action} out of range for {actions} actions"
                )));
            }
            Box::new(FixedActionPolicy::new(action, actions))
        }
    })
}

// ---------------------------------------------------------------------------
// Optional TOML config file
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub defaults: DefaultsSection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct EnvSection {
    pub kind: Option<String>,
    pub gamma: Option<f64>,
    pub chain_states: Option<usize>,
    pub value: Option<f64>,
    pub p: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct PolicySection {
    pub kind: Option<String>,
    pub mixing: Option<f64>,
    pub fixed_action: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DefaultsSection {
    pub epsilon: Option<f64>,
    pub delta: Option<f64>,
    pub tau: Option<f64>,
    pub clip: Option<f64>,
    pub k: Option<u64>,
    pub seed: Option<u64>,
    pub max_samples: Option<u64>,
}

pub fn load_file_config(path: &Path) -> Result<FileConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    toml::from_str(&text).map_err(|e| ConfigError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
