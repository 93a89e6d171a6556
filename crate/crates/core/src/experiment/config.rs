//! Experiment configuration: a versioned TOML schema describing one run
//! arm (MDP family, temperature path, weighting, features, data regime,
//! seeds, output location).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fqi::{HomotopySchedule, WeightingMode};
use crate::mdp::GarnetSpec;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Which measure the realizable features are orthonormalized under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMeasure {
    /// Stationary measure of the target-temperature optimum (default).
    MuStar,
    /// Uniform over state-action pairs; useful along homotopy paths where
    /// the stationary measure moves with the temperature.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeaturesConfig {
    /// Realizable class: the soft optimum plus `p - 1` random directions.
    Realizable {
        p: usize,
        #[serde(default = "default_feature_measure")]
        measure: FeatureMeasure,
    },
    /// Complete one-hot basis (Bellman-complete control arm).
    OneHot,
}

fn default_feature_measure() -> FeatureMeasure {
    FeatureMeasure::MuStar
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModeConfig {
    Population,
    Fitted { n_transitions: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitConfig {
    /// theta = 0.
    Zero,
    /// Projection of `Q* + delta * u` for a random unit direction `u`.
    Basin { delta: f64 },
}

/// Seed sweep: an explicit list or a contiguous range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedsConfig {
    Range { start: u64, count: u64 },
    List(Vec<u64>),
}

impl SeedsConfig {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedsConfig::List(v) => v.clone(),
            SeedsConfig::Range { start, count } => (*start..start + count).collect(),
        }
    }
}

/// Garnet family parameters; the per-run seed is supplied by the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarnetConfig {
    pub n_states: usize,
    pub n_actions: usize,
    pub branching: usize,
    pub reward_std: f64,
    pub discount: f64,
}

impl GarnetConfig {
    pub fn spec_for_seed(&self, seed: u64) -> GarnetSpec {
        GarnetSpec {
            n_states: self.n_states,
            n_actions: self.n_actions,
            branching: self.branching,
            reward_std: self.reward_std,
            discount: self.discount,
            seed,
        }
    }
}

/// Full declarative description of one experiment arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    /// Arm label used in file names and comparison reports.
    pub name: String,
    pub garnet: GarnetConfig,
    pub tau_target: f64,
    #[serde(default)]
    pub homotopy: Option<HomotopySchedule>,
    pub weighting: WeightingMode,
    pub features: FeaturesConfig,
    pub mode: ModeConfig,
    pub iters: usize,
    pub seeds: SeedsConfig,
    #[serde(default = "default_init")]
    pub init: InitConfig,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    pub output_dir: PathBuf,
    #[serde(default = "default_warm_start")]
    pub warm_start_unweighted: usize,
    #[serde(default = "default_qstar_tol")]
    pub qstar_tol: f64,
    #[serde(default = "default_stationary_tol")]
    pub stationary_tol: f64,
}

fn default_schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}

fn default_init() -> InitConfig {
    InitConfig::Zero
}

fn default_ridge() -> f64 {
    1e-10
}

fn default_warm_start() -> usize {
    0
}

fn default_qstar_tol() -> f64 {
    1e-11
}

fn default_stationary_tol() -> f64 {
    1e-13
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.name.is_empty()
            || !self
                .name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
        {
            return Err(Error::InvalidConfig(
                "name must be nonempty and use only [A-Za-z0-9_-]".into(),
            ));
        }
        self.garnet
            .spec_for_seed(0)
            .validate()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if !(self.tau_target > 0.0) {
            return Err(Error::InvalidConfig("tau_target must be > 0".into()));
        }
        if let Some(h) = &self.homotopy {
            h.validate()?;
            if (h.tau_target - self.tau_target).abs() > 1e-15 * self.tau_target.abs() {
                return Err(Error::InvalidConfig(
                    "homotopy.tau_target must equal tau_target".into(),
                ));
            }
            if h.stages * h.iters_per_stage > self.iters {
                return Err(Error::InvalidConfig(
                    "homotopy path exceeds the iteration budget".into(),
                ));
            }
        }
        self.weighting.validate()?;
        match &self.features {
            FeaturesConfig::Realizable { p, .. } if *p < 2 => {
                return Err(Error::InvalidConfig("realizable features need p >= 2".into()))
            }
            _ => {}
        }
        if let ModeConfig::Fitted { n_transitions } = self.mode {
            if n_transitions == 0 {
                return Err(Error::InvalidConfig("n_transitions must be >= 1".into()));
            }
        }
        if self.iters == 0 {
            return Err(Error::InvalidConfig("iters must be >= 1".into()));
        }
        if self.seeds.seeds().is_empty() {
            return Err(Error::InvalidConfig("seed list is empty".into()));
        }
        if let InitConfig::Basin { delta } = self.init {
            if !(delta >= 0.0) {
                return Err(Error::InvalidConfig("basin delta must be >= 0".into()));
            }
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::InvalidConfig("ridge must be >= 0".into()));
        }
        Ok(())
    }

    /// Total regression steps per run; the homotopy path plus the
    /// continuation at the target temperature fit inside this budget.
    pub fn total_iters(&self) -> usize {
        self.iters
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smoke_toml() -> String {
        r#"
schema_version = 1
name = "smoke"
tau_target = 0.5
iters = 20
seeds = { start = 0, count = 3 }
output_dir = "out/smoke"

[garnet]
n_states = 5
n_actions = 2
branching = 2
reward_std = 0.1
discount = 0.9

[weighting]
kind = "stationary-exact"
refresh_period = 1

[features]
kind = "realizable"
p = 3

[mode]
kind = "population"

[init]
kind = "zero"
"#
        .to_string()
    }

    #[test]
    fn parses_smoke_config() {
        let cfg = ExperimentConfig::from_toml_str(&smoke_toml()).unwrap();
        assert_eq!(cfg.name, "smoke");
        assert_eq!(cfg.seeds.seeds(), vec![0, 1, 2]);
        assert_eq!(cfg.ridge, 1e-10);
        assert!(matches!(cfg.features, FeaturesConfig::Realizable { p: 3, .. }));
    }

    #[test]
    fn roundtrips_through_toml() {
        let cfg = ExperimentConfig::from_toml_str(&smoke_toml()).unwrap();
        let text = cfg.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = ExperimentConfig::from_toml_str(&smoke_toml()).unwrap();
        cfg.tau_target = -1.0;
        assert!(cfg.validate().is_err());

        let mut cfg2 = ExperimentConfig::from_toml_str(&smoke_toml()).unwrap();
        cfg2.seeds = SeedsConfig::List(vec![]);
        assert!(cfg2.validate().is_err());

        let mut cfg3 = ExperimentConfig::from_toml_str(&smoke_toml()).unwrap();
        cfg3.name = "bad name!".into();
        assert!(cfg3.validate().is_err());
    }
}
