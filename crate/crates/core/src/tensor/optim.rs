//! Adam and global-norm gradient clipping.

use super::{ParamStore, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers of one tensor.
#[derive(Debug, Clone)]
pub struct AdamMoments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Real> AdamMoments<T> {
    pub fn zeros(len: usize) -> Self {
        AdamMoments {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }
}

/// One bias-corrected Adam update (no weight decay). `step` counts from 1.
pub fn adam_step<T: Real>(
    params: &mut [T],
    grads: &[T],
    state: &mut AdamMoments<T>,
    step: u64,
    lr: f64,
    cfg: AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::shape("adam_step", &[params.len()], &[grads.len(), state.m.len()]));
    }
    if step == 0 {
        return Err(Error::contract("adam_step", "step counter starts at 1"));
    }
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    let step_size = T::of(lr / bc1);
    let inv_bc2 = T::of(1.0 / bc2);
    let eps = T::of(cfg.eps);
    let one = T::one();
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        *p = *p - step_size * *m / ((*v * inv_bc2).sqrt() + eps);
    }
    Ok(())
}

/// Adam over every trainable parameter of a store.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    moments: Vec<Option<AdamMoments<T>>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient are treated as
    /// having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        self.step += 1;
        if self.moments.len() < store.len() {
            self.moments.resize_with(store.len(), || None);
        }
        for (slot, p) in self.moments.iter_mut().zip(store.iter_mut()) {
            if !p.trainable {
                continue;
            }
            let n = p.value.numel();
            let state = slot.get_or_insert_with(|| AdamMoments::zeros(n));
            let zeros;
            let grads: &[T] = match &p.grad {
                Some(g) => g.data(),
                None => {
                    zeros = vec![T::zero(); n];
                    &zeros
                }
            };
            adam_step(p.value.data_mut(), grads, state, self.step, lr, self.config)?;
        }
        Ok(())
    }
}

/// Rescales `grads` so that their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [&mut [T]], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x.f64() * x.f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|x| *x = *x * s);
        }
    }
    norm
}

/// [`clip_global_norm`] over every populated gradient of a store.
pub fn clip_store_grads<T: Real>(store: &mut ParamStore<T>, max_norm: f64) -> f64 {
    let mut grads: Vec<&mut [T]> = store
        .iter_mut()
        .filter_map(|p| p.grad.as_mut().map(Tensor::data_mut))
        .collect();
    clip_global_norm(&mut grads, max_norm)
}
