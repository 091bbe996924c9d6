//! Run configuration: scenario, training and experiment settings in one
//! TOML document, with named profiles.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::ScenarioConfig;
use crate::error::{Error, Result};
use crate::eval::{default_guide, ExperimentPreset, PresetName};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Preset used by `train` and `evaluate`.
    pub preset: PresetName,
    /// SVO angle of cooperative agents, radians.
    pub phi_star: f64,
    /// Altruistic agent of the one-SC preset; defaults to the middle agent.
    pub guide_agent: Option<usize>,
    /// Weight of the crash rate in the sweep objective.
    pub xi: f64,
    pub sweep_points: usize,
    pub seeds: Vec<u64>,
    pub eval_episodes: usize,
    pub suite: Vec<PresetName>,
    /// Evaluation episodes whose trajectories are logged.
    pub record_trajectories: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: PresetName::HvSc,
            phi_star: std::f64::consts::FRAC_PI_4,
            guide_agent: None,
            xi: 0.5,
            sweep_points: 9,
            seeds: vec![1, 2, 3],
            eval_episodes: 200,
            suite: vec![PresetName::HvE, PresetName::HvOneSc, PresetName::HvSc],
            record_trajectories: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
}

impl RunConfig {
    /// `desk` (3 agents, 8 humans, 2000 episodes), `full` (4 agents,
    /// 20 humans, 10000 episodes) or `long` (as `full`, 15000 episodes).
    pub fn profile(name: &str) -> Result<Self> {
        let mut c = Self::default();
        match name {
            "desk" => {
                c.scenario.agents = 3;
                c.scenario.humans = 8;
                c.train.episodes = 2000;
            }
            "full" | "long" => {
                c.scenario.agents = 4;
                c.scenario.humans = 20;
                c.train.episodes = if name == "long" { 15_000 } else { 10_000 };
            }
            _ => return Err(Error::Config(format!("unknown profile {name:?}"))),
        }
        Ok(c)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.train.validate()?;
        let e = &self.experiment;
        if !(0.0..=1.0).contains(&e.xi) {
            return Err(Error::Config(format!("crash weight {} outside [0, 1]", e.xi)));
        }
        if e.sweep_points < 2 || e.seeds.is_empty() || e.eval_episodes == 0 {
            return Err(Error::Config("sweep needs two points, a seed and evaluation episodes".into()));
        }
        self.preset(e.preset)?;
        Ok(())
    }

    pub fn guide(&self) -> usize {
        self.experiment.guide_agent.unwrap_or_else(|| default_guide(self.scenario.agents))
    }

    pub fn preset(&self, name: PresetName) -> Result<ExperimentPreset> {
        ExperimentPreset::new(name, self.scenario.agents, self.experiment.phi_star, self.guide())
    }
}
