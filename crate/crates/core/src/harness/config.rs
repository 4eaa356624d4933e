use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::density::{DensityTrainConfig, NoiseConfig};
use crate::dynamics::DynamicsTrainConfig;
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::planner::{GradientPlannerConfig, OptimizerKind, PlannerConfig, RegularizerKind};

/// Per-retraining epoch count as a function of completed episodes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EpochSchedule {
    #[default]
    Constant,
    /// `min(base, epochs)` once more than `after_episode` episodes are done.
    Floor { after_episode: usize, epochs: usize },
    /// `max(1, round(base * factor^k))`.
    Multiplicative { factor: f64 },
}

impl EpochSchedule {
    pub fn validate(&self) -> Result<()> {
        match self {
            EpochSchedule::Constant => Ok(()),
            EpochSchedule::Floor { epochs, .. } if *epochs >= 1 => Ok(()),
            EpochSchedule::Floor { .. } => Err(Error::config("floor schedule needs epochs >= 1")),
            EpochSchedule::Multiplicative { factor } if *factor > 0.0 && *factor <= 1.0 => Ok(()),
            EpochSchedule::Multiplicative { factor } => Err(Error::config(format!(
                "decay factor must be in (0, 1], got {factor}"
            ))),
        }
    }
}

/// Epochs for a retraining after `episode_index` completed episodes.
pub fn epoch_schedule(base_epochs: usize, episode_index: usize, schedule: &EpochSchedule) -> Result<usize> {
    if base_epochs == 0 {
        return Err(Error::config("base epochs must be >= 1"));
    }
    schedule.validate()?;
    Ok(match schedule {
        EpochSchedule::Constant => base_epochs,
        EpochSchedule::Floor {
            after_episode,
            epochs,
        } => {
            if episode_index > *after_episode {
                base_epochs.min(*epochs)
            } else {
                base_epochs
            }
        }
        EpochSchedule::Multiplicative { factor } => {
            let v = (base_epochs as f64 * factor.powi(episode_index as i32)).round();
            (v as usize).max(1)
        }
    })
}

/// Dynamics network and training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub hidden_layers: usize,
    pub hidden_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub holdout_fraction: f64,
    pub schedule: EpochSchedule,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            hidden_size: 64,
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            holdout_fraction: 0.1,
            schedule: EpochSchedule::Constant,
        }
    }
}

impl ModelSettings {
    pub fn train_config(&self, epochs: usize, seed: u64) -> DynamicsTrainConfig {
        DynamicsTrainConfig {
            hidden_layers: self.hidden_layers,
            hidden_size: self.hidden_size,
            epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed,
            holdout_fraction: self.holdout_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegularizerSettings {
    pub kind: RegularizerKind,
    /// Corruption scale in normalized units.
    pub noise_scale: f64,
    /// Energy weight in the planning objective.
    pub cost_multiplier: f64,
    pub hidden_layers: usize,
    pub hidden_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub holdout_fraction: f64,
    pub schedule: EpochSchedule,
}

impl Default for RegularizerSettings {
    fn default() -> Self {
        Self {
            kind: RegularizerKind::None,
            noise_scale: 0.5,
            cost_multiplier: 0.0,
            hidden_layers: 2,
            hidden_size: 32,
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            holdout_fraction: 0.1,
            schedule: EpochSchedule::Constant,
        }
    }
}

impl RegularizerSettings {
    pub fn train_config(&self, epochs: usize, seed: u64, noise_scale: f64) -> DensityTrainConfig {
        DensityTrainConfig {
            noise: NoiseConfig {
                sigma: noise_scale,
                seed,
            },
            epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            hidden_layers: self.hidden_layers,
            hidden_size: self.hidden_size,
            holdout_fraction: self.holdout_fraction,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerModel {
    #[default]
    Learned,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerSettings {
    pub horizon: usize,
    pub population: usize,
    pub elites: usize,
    pub iterations: usize,
    pub init_std: Option<Vec<f64>>,
    pub std_floor: f64,
    pub warm_start_shift: bool,
    pub parallel: bool,
    pub model: PlannerModel,
    pub optimizer: OptimizerKind,
    pub gradient: GradientPlannerConfig,
}

impl Default for PlannerSettings {
    fn default() -> Self {
        Self {
            horizon: 20,
            population: 400,
            elites: 40,
            iterations: 5,
            init_std: None,
            std_floor: 1e-3,
            warm_start_shift: true,
            parallel: true,
            model: PlannerModel::Learned,
            optimizer: OptimizerKind::Cem,
            gradient: GradientPlannerConfig::default(),
        }
    }
}

impl PlannerSettings {
    pub fn planner_config(&self, spec: &EnvSpec, kind: RegularizerKind, alpha: f64, seed: u64) -> PlannerConfig {
        PlannerConfig {
            horizon: self.horizon,
            alpha,
            regularizer: kind,
            population: self.population,
            elites: self.elites,
            iterations: self.iterations,
            init_std: self.init_std.clone(),
            std_floor: self.std_floor,
            action_low: spec.action_low.clone(),
            action_high: spec.action_high.clone(),
            warm_start_shift: self.warm_start_shift,
            seed,
            parallel: self.parallel,
            optimizer: self.optimizer,
            gradient: self.gradient.clone(),
        }
    }
}

/// Open-loop comparison settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DivergenceSettings {
    /// Length of the open-loop plan minus one.
    pub horizon: usize,
    /// Energy weight for the DEEN setting; the regularizer's
    /// `cost_multiplier` when absent.
    pub deen_alpha: Option<f64>,
    pub dae_alpha: f64,
    /// Denoiser corruption scale; the regularizer's `noise_scale` when absent.
    pub dae_noise_scale: Option<f64>,
}

impl Default for DivergenceSettings {
    fn default() -> Self {
        Self {
            horizon: 29,
            deen_alpha: None,
            dae_alpha: 1.0,
            dae_noise_scale: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    #[serde(default)]
    pub seed: u64,
    /// Total episodes, random ones included.
    pub episodes: usize,
    #[serde(default = "one")]
    pub initial_random_episodes: usize,
    /// Overrides the environment's episode length.
    #[serde(default)]
    pub episode_length: Option<usize>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Fill the `wall_clock_s` metrics column; off keeps outputs
    /// byte-reproducible.
    #[serde(default)]
    pub record_wall_clock: bool,
    /// Reinitialize networks before every retraining instead of continuing
    /// from the previous weights.
    #[serde(default)]
    pub reinit_models: bool,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub regularizer: RegularizerSettings,
    #[serde(default)]
    pub planner: PlannerSettings,
    #[serde(default)]
    pub divergence: DivergenceSettings,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        crate::envs::make_env(&self.env)?;
        if self.episodes == 0 || self.initial_random_episodes == 0 {
            return Err(Error::config("episodes and initial_random_episodes must be >= 1"));
        }
        if self.initial_random_episodes > self.episodes {
            return Err(Error::config("initial_random_episodes exceeds episodes"));
        }
        if self.episode_length == Some(0) {
            return Err(Error::config("episode_length must be >= 1"));
        }
        let m = &self.model;
        if m.hidden_layers == 0 || m.hidden_size == 0 || m.epochs == 0 || m.batch_size == 0 {
            return Err(Error::config("model sizes, epochs and batch_size must be >= 1"));
        }
        m.schedule.validate()?;
        let r = &self.regularizer;
        if r.kind != RegularizerKind::None {
            if !(r.noise_scale > 0.0) {
                return Err(Error::config("regularizer noise_scale must be > 0"));
            }
            if r.hidden_layers == 0 || r.hidden_size == 0 || r.epochs == 0 || r.batch_size == 0 {
                return Err(Error::config("regularizer sizes, epochs and batch_size must be >= 1"));
            }
        }
        if !(r.cost_multiplier >= 0.0 && r.cost_multiplier.is_finite()) {
            return Err(Error::config("cost_multiplier must be finite and >= 0"));
        }
        r.schedule.validate()?;
        let spec = crate::envs::make_env(&self.env)?.spec().clone();
        self.planner
            .planner_config(&spec, r.kind, r.cost_multiplier, self.seed)
            .validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        assert_eq!(epoch_schedule(50, 7, &EpochSchedule::Constant).unwrap(), 50);
        let floor = EpochSchedule::Floor {
            after_episode: 10,
            epochs: 8,
        };
        assert_eq!(epoch_schedule(600, 10, &floor).unwrap(), 600);
        assert_eq!(epoch_schedule(600, 11, &floor).unwrap(), 8);
        assert_eq!(epoch_schedule(5, 11, &floor).unwrap(), 5);
        let decay = EpochSchedule::Multiplicative { factor: 0.6 };
        for k in 0..30 {
            let expect = ((600.0 * 0.6f64.powi(k)).round() as usize).max(1);
            assert_eq!(epoch_schedule(600, k as usize, &decay).unwrap(), expect);
        }
        assert_eq!(epoch_schedule(600, 2, &decay).unwrap(), 216);
        assert!(epoch_schedule(0, 0, &EpochSchedule::Constant).is_err());
        assert!(epoch_schedule(5, 0, &EpochSchedule::Multiplicative { factor: 1.5 }).is_err());
    }

    #[test]
    fn unknown_keys_and_kinds_are_rejected() {
        assert!(ExperimentConfig::from_toml("env = \"pendulum\"\nepisodes = 2\nbogus = 1\n").is_err());
        let bad_kind = "env = \"pendulum\"\nepisodes = 2\n[model.schedule]\nkind = \"cosine\"\n";
        assert!(ExperimentConfig::from_toml(bad_kind).is_err());
        assert!(ExperimentConfig::from_toml("env = \"mujoco\"\nepisodes = 2\n").is_err());
    }

    #[test]
    fn round_trip_preserves_semantics() {
        let text = r#"
env = "pendulum"
seed = 4
episodes = 10
output_dir = "runs/x"

[model]
hidden_layers = 2
hidden_size = 48
epochs = 40
schedule = { kind = "floor", after_episode = 3, epochs = 10 }

[regularizer]
kind = "deen"
noise_scale = 0.3
cost_multiplier = 0.05
schedule = { kind = "multiplicative", factor = 0.7 }

[planner]
horizon = 15
population = 200
elites = 20
init_std = [0.8]
model = "oracle"
"#;
        let cfg = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(cfg.regularizer.kind, RegularizerKind::Deen);
        assert_eq!(cfg.planner.model, PlannerModel::Oracle);
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }
}
