use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::preset::PresetSpec;
use super::schedule::Schedule;
use crate::basis::DEFAULT_DIRECTION_THRESHOLD;
use crate::error::{Error, Result};
use crate::fields::{GridDomain, DEFAULT_SAMPLES_PER_PERIOD};
use crate::stage::StageParams;
use crate::step::StepOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub points: usize,
    #[serde(default)]
    pub lower: f64,
    #[serde(default = "one")]
    pub upper: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            points: 2048,
            lower: 0.0,
            upper: 1.0,
        }
    }
}

/// Stage constants shared by every stage of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub moll_constant: f64,
    pub lambda0_constant: f64,
    /// Margin `eta_0`; stage `q` uses `2^{-q} eta_0`.
    pub eta0: f64,
    pub r_threshold: f64,
    pub amplitude_floor: f64,
    pub nearness_threshold: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        let p = StageParams::default();
        Self {
            moll_constant: p.moll_constant,
            lambda0_constant: p.lambda0_constant,
            eta0: p.eta,
            r_threshold: p.r_threshold,
            amplitude_floor: p.amplitude_floor,
            nearness_threshold: p.nearness_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub direction: f64,
    pub immersion: f64,
    pub samples_per_period: f64,
    pub max_depth: usize,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            direction: DEFAULT_DIRECTION_THRESHOLD,
            immersion: 1e-6,
            samples_per_period: DEFAULT_SAMPLES_PER_PERIOD,
            max_depth: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Write an OBJ mesh of the final immersion (n = 2 only).
    pub mesh: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("corrugate-out"),
            mesh: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dimension: usize,
    pub preset: PresetSpec,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub stage: StageConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default = "default_alphas")]
    pub holder_alphas: Vec<f64>,
    /// Record wall-clock times; off keeps reports byte-identical across runs.
    #[serde(default)]
    pub timing: bool,
}

fn default_alphas() -> Vec<f64> {
    vec![0.05, 0.1, 0.15, 0.2, 0.25, 0.3]
}

impl RunConfig {
    pub fn new(dimension: usize, preset: PresetSpec) -> Self {
        Self {
            dimension,
            preset,
            grid: GridConfig::default(),
            schedule: Schedule::default(),
            stage: StageConfig::default(),
            thresholds: Thresholds::default(),
            output: OutputConfig::default(),
            holder_alphas: default_alphas(),
            timing: false,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn domain(&self) -> Result<GridDomain> {
        GridDomain::cube(
            self.dimension,
            self.grid.lower,
            self.grid.upper,
            self.grid.points,
        )
    }

    pub fn step_options(&self) -> StepOptions {
        StepOptions {
            immersion_threshold: self.thresholds.immersion,
            direction_threshold: self.thresholds.direction,
            samples_per_period: self.thresholds.samples_per_period,
            max_depth: self.thresholds.max_depth,
        }
    }

    /// Stage parameters for stage `q` of the schedule.
    pub fn stage_params(&self, q: usize) -> StageParams {
        let s = &self.schedule;
        StageParams {
            delta: s.delta(q),
            delta_hat: s.delta(q + 1),
            depth: s.depth,
            lambda_ratio: s.big_lambda(q),
            moll_constant: self.stage.moll_constant,
            lambda0_constant: self.stage.lambda0_constant,
            r_threshold: self.stage.r_threshold,
            lambda_in: s.lambda(self.dimension, q),
            eta: s.eta(self.stage.eta0, q),
            amplitude_floor: self.stage.amplitude_floor,
            nearness_threshold: self.stage.nearness_threshold,
            step: self.step_options(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_and_unknown_keys() {
        let c = RunConfig::new(2, PresetSpec::new("exact-deficit"));
        let text = c.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), c);
        let bad = format!("{text}\nbogus = 1\n");
        assert!(matches!(RunConfig::from_toml(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn minimal_file() {
        let c = RunConfig::from_toml(
            "dimension = 2\n[preset]\nname = \"anisotropic\"\nepsilon = 0.1\n",
        )
        .unwrap();
        assert_eq!(c.grid.points, 2048);
        assert_eq!(c.schedule, Schedule::default());
        assert_eq!(c.preset.epsilon, 0.1);
    }
}
