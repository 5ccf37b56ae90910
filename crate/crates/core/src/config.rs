//! Run configuration, read from TOML. Every field has a default, so a file
//! only needs the keys it changes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::CostStrategy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Encoder output channels `c`.
    pub latent_channels: usize,
    /// Token width `c'`.
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    /// Planes in the plane sweep.
    pub depth_planes: usize,
    /// Hypotheses behind the ray-distance softmax.
    pub distance_bins: usize,
    pub cost_strategy: CostStrategy,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Depth range used when a scene does not carry its own.
    pub near: f64,
    pub far: f64,
    /// Channels after the first and second upsampling stage.
    pub decoder_channels: [usize; 2],
    /// Initial attention temperature; defaults to `sqrt(head_dim)`.
    pub qk_temperature: Option<f64>,
    pub aux_head: bool,
    pub freeze_encoder: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_channels: 16,
            hidden: 64,
            layers: 2,
            heads: 4,
            mlp_hidden: 192,
            depth_planes: 8,
            distance_bins: 32,
            cost_strategy: CostStrategy::CostFree,
            scale_min: 0.5,
            scale_max: 15.0,
            near: 1.0,
            far: 100.0,
            decoder_channels: [32, 16],
            qk_temperature: None,
            aux_head: true,
            freeze_encoder: false,
        }
    }
}

impl ModelConfig {
    /// Full-size transformer settings.
    pub fn full_scale() -> Self {
        ModelConfig {
            hidden: 512,
            layers: 12,
            heads: 8,
            mlp_hidden: 1536,
            distance_bins: 128,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads.max(1)
    }

    pub fn temperature(&self) -> f64 {
        self.qk_temperature.unwrap_or_else(|| (self.head_dim() as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.heads == 0 || self.hidden % self.heads != 0 {
            return fail(format!("hidden {} is not divisible by heads {}", self.hidden, self.heads));
        }
        if [self.latent_channels, self.hidden, self.layers, self.mlp_hidden].contains(&0)
            || self.decoder_channels.contains(&0)
        {
            return fail("model widths and layer count must be positive".into());
        }
        if self.depth_planes < 2 || self.distance_bins < 2 {
            return fail("need at least two sweep planes and two distance bins".into());
        }
        if !(self.scale_min > 0.0 && self.scale_max > self.scale_min) {
            return fail(format!("need 0 < scale_min < scale_max, got {} and {}", self.scale_min, self.scale_max));
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return fail(format!("need 0 < near < far, got {} and {}", self.near, self.far));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub seed: u64,
    pub peak_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub decay_until: usize,
    pub ema_decay: f64,
    pub grad_clip: f64,
    /// Probability that target poses join the token sequence in a step.
    pub target_pose_prob: f64,
    pub flip_prob: f64,
    pub aux_weight: f64,
    pub lambda_perceptual: f64,
    pub perceptual: bool,
    pub gradient_loss: bool,
    /// Scenes whose gradients are summed before one optimizer step.
    pub grad_accum: usize,
    /// Target views supervised per scene and step, drawn at random; 0 uses all.
    pub targets_per_step: usize,
    pub checkpoint_every: usize,
    pub log_every: usize,
    pub background: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            seed: 0,
            peak_lr: 3e-4,
            min_lr: 1.5e-4,
            warmup_steps: 100,
            decay_until: 2000,
            ema_decay: 0.999,
            grad_clip: 0.5,
            target_pose_prob: 0.5,
            flip_prob: 0.5,
            aux_weight: 1.0,
            lambda_perceptual: 0.05,
            perceptual: false,
            gradient_loss: true,
            grad_accum: 1,
            targets_per_step: 1,
            checkpoint_every: 500,
            log_every: 10,
            background: [0.0; 3],
        }
    }
}

impl TrainConfig {
    /// Optimizer and schedule values at full scale.
    pub fn full_scale() -> Self {
        TrainConfig {
            steps: 150_000,
            peak_lr: 1e-4,
            min_lr: 5e-5,
            warmup_steps: 3000,
            decay_until: 150_000,
            targets_per_step: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.min_lr >= 0.0 && self.min_lr <= self.peak_lr) {
            return fail(format!("need 0 <= min_lr <= peak_lr, got {} and {}", self.min_lr, self.peak_lr));
        }
        if self.warmup_steps >= self.decay_until {
            return fail(format!("warmup {} must end before decay_until {}", self.warmup_steps, self.decay_until));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return fail(format!("ema_decay must be in [0, 1), got {}", self.ema_decay));
        }
        for (name, p) in [("target_pose_prob", self.target_pose_prob), ("flip_prob", self.flip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} must be a probability, got {p}"));
            }
        }
        if self.grad_clip <= 0.0 || self.aux_weight < 0.0 || self.lambda_perceptual < 0.0 || self.grad_accum == 0 {
            return fail("grad_clip must be positive; weights non-negative; grad_accum >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    pub scenes: usize,
    pub context_views: usize,
    pub target_views: usize,
    pub resolution: usize,
    pub objects: usize,
    /// Subsamples per pixel axis in the ground-truth ray caster.
    pub supersample: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            seed: 0,
            scenes: 1,
            context_views: 2,
            target_views: 1,
            resolution: 64,
            objects: 3,
            supersample: 2,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_views < 2 || self.target_views == 0 {
            return Err(Error::Config("need at least 2 context views and 1 target view".into()));
        }
        if self.resolution < 16 || self.resolution % 4 != 0 || self.supersample == 0 || self.scenes == 0 {
            return Err(Error::Config(format!(
                "resolution must be a multiple of 4 and >= 16, got {}",
                self.resolution
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.data.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = Config::from_toml("[model]\nlayers = 3\n[train]\nsteps = 10\n").unwrap();
        assert_eq!(cfg.model.layers, 3);
        assert_eq!(cfg.model.hidden, 64);
        assert_eq!(cfg.train.steps, 10);
        assert_eq!(cfg.train.ema_decay, 0.999);
    }

    #[test]
    fn round_trip_and_rejections() {
        let cfg = Config::default();
        assert_eq!(Config::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(Config::from_toml("[model]\nlayerz = 3\n").is_err());
        assert!(Config::from_toml("[model]\nheads = 5\n").is_err());
        assert!(Config::from_toml("[model]\ncost_strategy = \"correlation\"\n").is_ok());
        assert!(Config::from_toml("[model]\ncost_strategy = \"sum\"\n").is_err());
    }

    #[test]
    fn presets_validate() {
        ModelConfig::full_scale().validate().unwrap();
        TrainConfig::full_scale().validate().unwrap();
        assert_eq!(ModelConfig::default().temperature(), 4.0);
    }
}
