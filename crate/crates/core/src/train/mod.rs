//! Losses, schedule, EMA, augmentation and the training loop.

mod ema;
mod loss;
mod schedule;
mod step;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use ema::{ema_update, EmaState};
pub use loss::{image_gradient, reconstruction_loss, LossParts, LossWeights, PerceptualLoss};
pub use schedule::{lr_at, Schedule};
pub use step::{flip_images, loss_weights, scene_loss, train_step, SceneLoss, StepContext, StepMetrics, TrainSample};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::network::H3rModel;
use crate::tensor::optim::{Adam, AdamConfig};
use crate::tensor::Real;

/// Owns the model and every piece of optimizer state.
pub struct Trainer<T: Real> {
    pub model: H3rModel<T>,
    pub optimizer: Adam<T>,
    pub ema: EmaState<T>,
    pub schedule: Schedule,
    pub config: TrainConfig,
    pub step: usize,
    rng: ChaCha8Rng,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: H3rModel<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let schedule = Schedule::from_config(&config)?;
        let ema = EmaState::new(&model.params, config.ema_decay)?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer {
            model,
            optimizer: Adam::new(AdamConfig::default()),
            ema,
            schedule,
            config,
            step: 0,
            rng,
        })
    }

    /// One optimizer step on `batch`.
    pub fn step(&mut self, batch: &[TrainSample<T>]) -> Result<StepMetrics> {
        let ctx = StepContext {
            optimizer: &mut self.optimizer,
            schedule: &self.schedule,
            ema: &mut self.ema,
            rng: &mut self.rng,
            config: &self.config,
        };
        let m = train_step(&mut self.model, batch, self.step, ctx)?;
        self.step += 1;
        Ok(m)
    }

    /// The model with EMA weights swapped in.
    pub fn ema_model(&self) -> Result<H3rModel<T>> {
        let mut m = self.model.clone();
        m.params = self.ema.apply_to(&self.model.params)?;
        Ok(m)
    }

    /// Runs until `config.steps`, cycling through `samples` in `grad_accum`
    /// sized batches. `on_step` sees every step's metrics.
    pub fn run(
        &mut self,
        samples: &[TrainSample<T>],
        mut on_step: impl FnMut(&Self, &StepMetrics) -> Result<()>,
    ) -> Result<()> {
        if samples.is_empty() {
            return Err(Error::Data("no training scenes".into()));
        }
        let k = self.config.grad_accum;
        while self.step < self.config.steps {
            let start = (self.step * k) % samples.len();
            let batch: Vec<TrainSample<T>> = (0..k).map(|i| samples[(start + i) % samples.len()].clone()).collect();
            let m = self.step(&batch)?;
            on_step(self, &m)?;
        }
        Ok(())
    }
}

/// CSV log of [`StepMetrics`].
pub struct MetricsLog<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> MetricsLog<W> {
    pub fn new(w: W) -> Self {
        MetricsLog { writer: csv::Writer::from_writer(w) }
    }

    pub fn record(&mut self, m: &StepMetrics) -> Result<()> {
        self.writer.serialize(m).map_err(|e| Error::Data(format!("metrics log: {e}")))?;
        self.writer.flush().map_err(|e| Error::Data(format!("metrics log: {e}")))
    }
}
