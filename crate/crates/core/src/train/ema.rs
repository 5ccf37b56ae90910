use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Real, Tensor};

/// Exponential moving average of every parameter. The shadow starts at zero;
/// [`EmaState::averaged`] divides out the start-up bias.
#[derive(Debug, Clone)]
pub struct EmaState<T> {
    pub decay: f64,
    pub shadow: Vec<(String, Tensor<T>)>,
    pub updates: u64,
}

impl<T: Real> EmaState<T> {
    pub fn new(store: &ParamStore<T>, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Config(format!("ema decay must be in [0, 1), got {decay}")));
        }
        let shadow = store
            .iter()
            .map(|(_, p)| (p.name.clone(), Tensor::zeros(p.value.shape())))
            .collect();
        Ok(EmaState { decay, shadow, updates: 0 })
    }

    /// `shadow <- decay * shadow + (1 - decay) * param`
    pub fn update(&mut self, store: &ParamStore<T>) -> Result<()> {
        if store.len() != self.shadow.len() {
            return Err(Error::contract("ema_update", "parameter count changed"));
        }
        let (d, e) = (T::of(self.decay), T::of(1.0 - self.decay));
        for ((name, s), (_, p)) in self.shadow.iter_mut().zip(store.iter()) {
            if *name != p.name || s.shape() != p.value.shape() {
                return Err(Error::contract("ema_update", format!("shadow {name} does not mirror {}", p.name)));
            }
            s.data_mut().iter_mut().zip(p.value.data()).for_each(|(s, &p)| *s = d * *s + e * p);
        }
        self.updates += 1;
        Ok(())
    }

    /// `1 - decay^updates`, the weight mass accumulated so far.
    pub fn mass(&self) -> f64 {
        1.0 - self.decay.powf(self.updates as f64)
    }

    /// Bias-corrected averages, or `None` before the first update.
    pub fn averaged(&self) -> Option<Vec<(String, Tensor<T>)>> {
        if self.updates == 0 {
            return None;
        }
        let k = T::of(1.0 / self.mass());
        Some(self.shadow.iter().map(|(n, s)| (n.clone(), s.map(|v| v * k))).collect())
    }

    /// A copy of `store` holding the averaged values.
    pub fn apply_to(&self, store: &ParamStore<T>) -> Result<ParamStore<T>> {
        let mut out = store.clone();
        if let Some(avg) = self.averaged() {
            out.load_values(&avg)?;
        }
        Ok(out)
    }
}

/// Free function form of [`EmaState::update`].
pub fn ema_update<T: Real>(state: &mut EmaState<T>, params: &ParamStore<T>) -> Result<()> {
    state.update(params)
}
