//! Latent volumes built from plane-sweep stacks, their fusion with the
//! reference latent, and averaging over several source views.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::layers::Linear;
use crate::tensor::{ParamStore, Real, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostStrategy {
    /// Scaled dot product per depth plane.
    Correlation,
    /// Warped minus reference features.
    Difference,
    /// Raw warped features.
    #[default]
    CostFree,
}

impl CostStrategy {
    /// Channels of a volume built from `depths` planes of `channels` features.
    pub fn channels(self, depths: usize, channels: usize) -> usize {
        match self {
            CostStrategy::Correlation => depths,
            CostStrategy::Difference | CostStrategy::CostFree => depths * channels,
        }
    }
}

impl fmt::Display for CostStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CostStrategy::Correlation => "correlation",
            CostStrategy::Difference => "difference",
            CostStrategy::CostFree => "cost-free",
        })
    }
}

impl FromStr for CostStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "correlation" => Ok(CostStrategy::Correlation),
            "difference" => Ok(CostStrategy::Difference),
            "cost-free" => Ok(CostStrategy::CostFree),
            other => Err(Error::Config(format!(
                "unknown cost strategy {other:?} (expected correlation, difference or cost-free)"
            ))),
        }
    }
}

/// Per-pixel volume `[h, w, C]` seen from `reference_view`.
#[derive(Debug, Clone, Copy)]
pub struct LatentVolume<'t, T: Real> {
    pub values: Var<'t, T>,
    pub strategy: CostStrategy,
    pub reference_view: usize,
    /// `None` once several sources have been averaged.
    pub source_view: Option<usize>,
}

impl<'t, T: Real> LatentVolume<'t, T> {
    pub fn between(mut self, reference: usize, source: usize) -> Self {
        self.reference_view = reference;
        self.source_view = Some(source);
        self
    }

    pub fn channels(&self) -> usize {
        *self.values.shape().last().expect("rank 3")
    }
}

/// Builds a volume from the reference latent `[h,w,c]` and a sweep `[h,w,d,c]`.
pub fn build_volume<'t, T: Real>(
    x_i: Var<'t, T>,
    sweep: Var<'t, T>,
    strategy: CostStrategy,
) -> Result<LatentVolume<'t, T>> {
    let (xs, ss) = (x_i.shape(), sweep.shape());
    let (h, w, c) = match xs.as_slice() {
        &[h, w, c] => (h, w, c),
        _ => return Err(Error::shape("build_volume", &xs, &ss)),
    };
    if ss.len() != 4 || ss[0] != h || ss[1] != w || ss[3] != c {
        return Err(Error::shape("build_volume", &xs, &ss));
    }
    let d = ss[2];
    let values = match strategy {
        CostStrategy::Correlation => {
            let dots = sweep.mul(x_i.reshape(&[h, w, 1, c])?)?.sum_axis(3)?;
            dots.scale(T::of(1.0 / (c as f64).sqrt()))?
        }
        CostStrategy::Difference => sweep.sub(x_i.reshape(&[h, w, 1, c])?)?.reshape(&[h, w, d * c])?,
        CostStrategy::CostFree => sweep.reshape(&[h, w, d * c])?,
    };
    Ok(LatentVolume {
        values,
        strategy,
        reference_view: 0,
        source_view: None,
    })
}

/// The two affine projections merging the reference latent and its volume.
#[derive(Debug, Clone)]
pub struct FusionWeights {
    pub reference: Linear,
    pub volume: Linear,
}

impl FusionWeights {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        latent_channels: usize,
        volume_channels: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(FusionWeights {
            reference: Linear::new(store, &format!("{name}.reference"), latent_channels, hidden, true, rng)?,
            volume: Linear::new(store, &format!("{name}.volume"), volume_channels, hidden, true, rng)?,
        })
    }
}

/// `z = Linear1(x_i) + Linear2(volume)`, per pixel.
pub fn fuse<'t, T: Real>(
    tape: &'t Tape<T>,
    store: &ParamStore<T>,
    x_i: Var<'t, T>,
    volume: &LatentVolume<'t, T>,
    weights: &FusionWeights,
) -> Result<Var<'t, T>> {
    let (xs, vs) = (x_i.shape(), volume.values.shape());
    if xs.len() != 3 || vs.len() != 3 || xs[..2] != vs[..2] {
        return Err(Error::shape("fuse", &xs, &vs));
    }
    if xs[2] != weights.reference.in_dim || vs[2] != weights.volume.in_dim {
        return Err(Error::contract(
            "fuse",
            format!(
                "expected {} latent and {} volume channels, got {} and {}",
                weights.reference.in_dim, weights.volume.in_dim, xs[2], vs[2]
            ),
        ));
    }
    let a = weights.reference.forward(tape, store, x_i)?;
    let b = weights.volume.forward(tape, store, volume.values)?;
    a.add(b)
}

/// Mean of several volumes that share a reference view and strategy.
/// Summation follows ascending source index so the result does not depend on
/// the order of `volumes`.
pub fn multi_view_average<'t, T: Real>(volumes: &[LatentVolume<'t, T>]) -> Result<LatentVolume<'t, T>> {
    let first = volumes
        .first()
        .ok_or_else(|| Error::contract("multi_view_average", "no volumes to average"))?;
    for v in volumes {
        if v.strategy != first.strategy {
            return Err(Error::contract(
                "multi_view_average",
                format!("mixed strategies {} and {}", first.strategy, v.strategy),
            ));
        }
        if v.values.shape() != first.values.shape() {
            return Err(Error::shape("multi_view_average", &first.values.shape(), &v.values.shape()));
        }
    }
    if volumes.len() == 1 {
        return Ok(*first);
    }
    let mut order: Vec<&LatentVolume<'t, T>> = volumes.iter().collect();
    order.sort_by_key(|v| (v.source_view, v.values.index()));
    let mut sum = order[0].values;
    for v in &order[1..] {
        sum = sum.add(v.values)?;
    }
    Ok(LatentVolume {
        values: sum.scale(T::of(1.0 / volumes.len() as f64))?,
        strategy: first.strategy,
        reference_view: first.reference_view,
        source_view: None,
    })
}

/// Plain-tensor helper used by oracles: elementwise mean of equally shaped tensors.
pub fn mean_of<T: Real>(tensors: &[Tensor<T>]) -> Tensor<T> {
    let n = T::of(tensors.len() as f64);
    let mut out = tensors[0].clone();
    for t in &tensors[1..] {
        out.data_mut().iter_mut().zip(t.data()).for_each(|(a, &b)| *a = *a + b);
    }
    out.map(|x| x / n)
}
