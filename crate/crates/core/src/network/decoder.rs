use rand::Rng;

use super::layers::Conv2d;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Real, Tape, Tensor, Var};

/// `x + conv(silu(conv(silu(x))))`
#[derive(Debug, Clone)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResBlock {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, ch: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(ResBlock {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), 3, ch, ch, 1, 1, rng)?,
            conv2: Conv2d::new(store, &format!("{name}.conv2"), 3, ch, ch, 1, 1, rng)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.conv1.forward(tape, store, x.silu()?)?;
        let h = self.conv2.forward(tape, store, h.silu()?)?;
        x.add(h)
    }
}

/// One 2x stage: nearest upsampling, a 3x3 channel change and a residual block.
#[derive(Debug, Clone)]
pub struct UpStage {
    pub conv: Conv2d,
    pub res: ResBlock,
}

/// Hierarchical decoder `[N,h,w,c'] -> [N,4h,4w,out]` ending in a 1x1 head.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub stages: Vec<UpStage>,
    pub head: Conv2d,
    pub out_channels: usize,
}

impl Decoder {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        channels: [usize; 2],
        out_channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut stages = Vec::new();
        let mut prev = in_ch;
        for (i, &ch) in channels.iter().enumerate() {
            stages.push(UpStage {
                conv: Conv2d::new(store, &format!("{name}.up{i}.conv"), 3, prev, ch, 1, 1, rng)?,
                res: ResBlock::new(store, &format!("{name}.up{i}.res"), ch, rng)?,
            });
            prev = ch;
        }
        let head = Conv2d::new(store, &format!("{name}.head"), 1, prev, out_channels, 1, 0, rng)?;
        Ok(Decoder { stages, head, out_channels })
    }

    /// Overwrites the head bias.
    pub fn set_head_bias<T: Real>(&self, store: &mut ParamStore<T>, bias: &[f64]) -> Result<()> {
        if bias.len() != self.out_channels {
            return Err(Error::contract("decoder", format!("{} bias values for {} channels", bias.len(), self.out_channels)));
        }
        store.get_mut(self.head.bias).value = Tensor::from_f64(&[bias.len()], bias)?;
        Ok(())
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        let mut x = z;
        for stage in &self.stages {
            x = stage.conv.forward(tape, store, x.upsample2x()?)?;
            x = stage.res.forward(tape, store, x)?;
        }
        self.head.forward(tape, store, x.silu()?)
    }
}
