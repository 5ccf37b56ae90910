use std::f64::consts::PI;

use crate::config::TrainConfig;
use crate::error::{Error, Result};

/// Linear warmup, cosine decay to `min_lr`, then constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub peak_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub decay_until: usize,
}

impl Schedule {
    pub fn new(peak_lr: f64, min_lr: f64, warmup_steps: usize, decay_until: usize) -> Result<Self> {
        if !(min_lr >= 0.0 && min_lr <= peak_lr) || warmup_steps >= decay_until {
            return Err(Error::Config(format!(
                "bad schedule: peak {peak_lr}, min {min_lr}, warmup {warmup_steps}, decay_until {decay_until}"
            )));
        }
        Ok(Schedule { peak_lr, min_lr, warmup_steps, decay_until })
    }

    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        Self::new(cfg.peak_lr, cfg.min_lr, cfg.warmup_steps, cfg.decay_until)
    }

    /// Full-scale values.
    pub fn full_scale() -> Self {
        Schedule { peak_lr: 1e-4, min_lr: 5e-5, warmup_steps: 3000, decay_until: 150_000 }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak_lr * step as f64 / self.warmup_steps as f64;
        }
        if step >= self.decay_until {
            return self.min_lr;
        }
        let p = (step - self.warmup_steps) as f64 / (self.decay_until - self.warmup_steps) as f64;
        self.min_lr + 0.5 * (self.peak_lr - self.min_lr) * (1.0 + (PI * p).cos())
    }
}

/// Free function form of [`Schedule::lr_at`].
pub fn lr_at(step: usize, schedule: &Schedule) -> f64 {
    schedule.lr_at(step)
}
