//! Run configuration: one TOML file with `[train]`, `[episode]`, `[sac]`,
//! `[latent]` and `[intervention]` sections. Every key has a default, so an
//! empty file is a complete configuration.

use std::path::{Path, PathBuf};

use crd_vision::InterventionConfig;
use crd_world::{DminSource, Domain, EpisodeConfig, InitPattern, RewardConfig, SensorConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::latent::{BlockMask, LatentConfig};
use crate::policy::SacConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_episodes: usize,
    /// Gradient updates after each episode once the buffer is warm.
    pub updates_per_episode: usize,
    pub num_uavs: usize,
    pub scenario: String,
    /// `false` strips every obstacle from the training scenario.
    pub obstacles: bool,
    pub init_pattern: InitPattern,
    pub ablation_mask: BlockMask,
    /// `false` disables background interventions and the alignment loss.
    pub interventions: bool,
    /// Transitions collected with uniform random actions before updates start.
    pub warmup_transitions: usize,
    /// Episodes between checkpoints; 0 disables periodic checkpoints.
    pub checkpoint_interval: usize,
    /// Episodes between evaluations; 0 disables them.
    pub eval_interval: usize,
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_episodes: 300,
            updates_per_episode: 400,
            num_uavs: 8,
            scenario: "playground".into(),
            obstacles: true,
            init_pattern: InitPattern::Random,
            ablation_mask: BlockMask::causal(),
            interventions: true,
            warmup_transitions: 1000,
            checkpoint_interval: 50,
            eval_interval: 0,
            eval_episodes: 10,
        }
    }
}

/// Episode settings other than the swarm size and initialisation, which
/// live in `[train]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSection {
    pub max_steps: usize,
    pub dt: f64,
    pub uav_radius: f64,
    pub sensor: SensorConfig,
    pub reward: RewardConfig,
    pub d_min_source: DminSource,
}

impl Default for EpisodeSection {
    fn default() -> Self {
        let e = EpisodeConfig::default();
        EpisodeSection {
            max_steps: e.max_steps,
            dt: e.dt,
            uav_radius: e.uav_radius,
            sensor: e.sensor,
            reward: e.reward,
            d_min_source: e.d_min_source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
    pub episode: EpisodeSection,
    pub sac: SacConfig,
    pub latent: LatentConfig,
    pub intervention: InterventionConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            train: TrainConfig::default(),
            episode: EpisodeSection::default(),
            sac: SacConfig::default(),
            latent: LatentConfig::default(),
            intervention: InterventionConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates; errors carry the offending key path.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| CoreError::Config(e.to_string()))?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CoreError::Config(format!("at `{path}`: {}", e.into_inner().message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| CoreError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CoreError::Config(e.to_string()))
    }

    pub fn episode_config(&self) -> EpisodeConfig {
        EpisodeConfig {
            num_uavs: self.train.num_uavs,
            init_pattern: self.train.init_pattern,
            max_steps: self.episode.max_steps,
            dt: self.episode.dt,
            uav_radius: self.episode.uav_radius,
            sensor: self.episode.sensor,
            reward: self.episode.reward,
            d_min_source: self.episode.d_min_source,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.max_episodes == 0 || t.updates_per_episode == 0 || t.num_uavs == 0 {
            return Err(CoreError::Config(
                "max_episodes, updates_per_episode and num_uavs must be >= 1".into(),
            ));
        }
        if t.eval_interval > 0 && t.eval_episodes == 0 {
            return Err(CoreError::Config("eval_episodes must be >= 1 when evaluating".into()));
        }
        t.scenario
            .parse::<Domain>()
            .map_err(|e| CoreError::Config(format!("train.scenario: {e}")))?;
        self.episode_config().validate()?;
        self.sac.validate()?;
        self.latent.validate()?;
        if t.interventions {
            self.intervention.validate()?;
        }
        let s = &self.episode.sensor;
        if s.height < 16 || s.width < 16 || !s.height.is_power_of_two() || !s.width.is_power_of_two() {
            return Err(CoreError::Config(format!(
                "sensor {}x{} must be a power of two of at least 16",
                s.height, s.width
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.max_episodes, 300);
        assert_eq!(cfg.train.updates_per_episode, 400);
        assert_eq!(cfg.sac.buffer_capacity, 20_000);
        assert_eq!(cfg.episode_config().num_uavs, 8);
    }

    #[test]
    fn unknown_key_names_its_path() {
        let err = RunConfig::from_toml("[sac]\ngama = 0.9\n").unwrap_err().to_string();
        assert!(err.contains("sac"), "{err}");
        let err = RunConfig::from_toml("[sac]\ngamma = \"x\"\n").unwrap_err().to_string();
        assert!(err.contains("sac.gamma"), "{err}");
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.seed = 7;
        cfg.train.ablation_mask = BlockMask::all();
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn empty_mask_rejected() {
        assert!(RunConfig::from_toml("[train]\nablation_mask = []\n").is_err());
        assert!(RunConfig::from_toml("[train]\nablation_mask = [\"z1\"]\n").is_ok());
        assert!(RunConfig::from_toml("[train]\nscenario = \"moon\"\n").is_err());
    }
}
