//! Parameterised building blocks. Each layer holds [`ParamId`]s into a
//! [`ParamStore`] and is applied on a caller-provided tape.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Affine map over the last axis: `x W + b`, weight `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform init in `±1/sqrt(in_dim)`, zero bias.
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), &[in_dim, out_dim], bound, rng)?;
        let bias = if bias {
            Some(store.insert(format!("{name}.bias"), Tensor::zeros(&[out_dim]))?)
        } else {
            None
        };
        Ok(Linear { weight, bias, in_dim, out_dim })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = x.matmul(tape.param(store, self.weight))?;
        match self.bias {
            Some(b) => y.add(tape.param(store, b)),
            None => Ok(y),
        }
    }
}

/// Square-kernel convolution with symmetric padding, weight `[k, k, in, out]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        kernel: usize,
        in_ch: usize,
        out_ch: usize,
        stride: usize,
        padding: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = 1.0 / ((kernel * kernel * in_ch) as f64).sqrt();
        let weight = store.uniform(format!("{name}.weight"), &[kernel, kernel, in_ch, out_ch], bound, rng)?;
        let bias = store.insert(format!("{name}.bias"), Tensor::zeros(&[out_ch]))?;
        Ok(Conv2d { weight, bias, stride, padding })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv2d(
            tape.param(store, self.weight),
            Some(tape.param(store, self.bias)),
            self.stride,
            self.padding,
        )
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Result<Self> {
        let gamma = store.insert(format!("{name}.gamma"), Tensor::ones(&[dim]))?;
        let beta = store.insert(format!("{name}.beta"), Tensor::zeros(&[dim]))?;
        Ok(LayerNorm { gamma, beta, eps: Self::EPS })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm(tape.param(store, self.gamma), tape.param(store, self.beta), T::of(self.eps))
    }
}
