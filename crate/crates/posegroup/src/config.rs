//! TOML configuration: skeletons and run settings.

use std::path::Path;

use anyhow::{Context, Result};
use posegroup_core::synth::{GenConfig, NoiseConfig};
use posegroup_core::train::TrainConfig;
use posegroup_core::{ModelConfig, SkeletonSpec};
use serde::Deserialize;

/// Skeleton file:
///
/// ```toml
/// types = ["nose", "left_eye"]
/// kappa = 0.8          # or one value per type
/// ```
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkeletonFile {
    types: Vec<String>,
    #[serde(default = "default_kappa")]
    kappa: Kappa,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Kappa {
    Uniform(f64),
    PerType(Vec<f64>),
}

fn default_kappa() -> Kappa {
    Kappa::Uniform(posegroup_core::skeleton::DEFAULT_KAPPA)
}

pub fn parse_skeleton(text: &str) -> Result<SkeletonSpec> {
    let file: SkeletonFile = toml::from_str(text)?;
    let kappa = match file.kappa {
        Kappa::Uniform(k) => vec![k; file.types.len()],
        Kappa::PerType(v) => v,
    };
    Ok(SkeletonSpec::new(file.types, kappa)?)
}

/// `coco17` names the built-in skeleton; anything else is read as a file.
pub fn load_skeleton(source: &str) -> Result<SkeletonSpec> {
    if source == "coco17" {
        return Ok(SkeletonSpec::coco17());
    }
    let text = std::fs::read_to_string(source).with_context(|| format!("reading skeleton {source}"))?;
    parse_skeleton(&text).with_context(|| format!("invalid skeleton {source}"))
}

/// Everything `synth` and `train` need. Every section is optional.
///
/// ```toml
/// skeleton = "coco17"
/// scene_seed = 0
///
/// [scenes]
/// persons = [2, 6]
///
/// [noise]
/// jitter = 0.005
///
/// [model]
/// hidden = 64
///
/// [train]
/// steps = 2000
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub skeleton: String,
    /// Base seed of the generated training scene stream.
    pub scene_seed: u64,
    pub scenes: GenConfig,
    pub noise: NoiseConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            skeleton: "coco17".into(),
            scene_seed: 0,
            scenes: GenConfig::default(),
            noise: NoiseConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse()?;
        let own_noise = table.get("train").and_then(|t| t.get("noise")).is_some();
        let mut cfg: RunConfig = table.try_into()?;
        // training renders with the scene noise unless it has its own table
        if !own_noise {
            cfg.train.noise = cfg.noise.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenes.validate()?;
        self.noise.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.appearance_dim != self.noise.appearance_dim {
            return Err(posegroup_core::Error::config(
                "model.appearance_dim",
                format!("must equal noise.appearance_dim ({})", self.noise.appearance_dim),
            )
            .into());
        }
        Ok(())
    }
}
