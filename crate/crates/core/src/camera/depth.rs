use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Depth hypotheses uniformly spaced in inverse depth, nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthSamples {
    pub near: f64,
    pub far: f64,
    pub values: Vec<f64>,
}

impl DepthSamples {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(&[self.values.len()], |i| T::of(self.values[i]))
    }
}

pub fn inverse_depth_samples(near: f64, far: f64, count: usize) -> Result<DepthSamples> {
    if !(near > 0.0 && far > near && far.is_finite()) {
        return Err(Error::contract("inverse_depth_samples", format!("need 0 < near < far, got {near}, {far}")));
    }
    if count < 2 {
        return Err(Error::contract("inverse_depth_samples", format!("need at least 2 samples, got {count}")));
    }
    let (inv_near, inv_far) = (1.0 / near, 1.0 / far);
    let last = (count - 1) as f64;
    let mut values: Vec<f64> = (0..count)
        .map(|k| 1.0 / (inv_near + (inv_far - inv_near) * k as f64 / last))
        .collect();
    values[0] = near;
    values[count - 1] = far;
    Ok(DepthSamples { near, far, values })
}
