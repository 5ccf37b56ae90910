use rand::Rng;

use super::layers::Conv2d;
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Real, Tape, Var};

/// Small convolutional encoder: two stride-2 stages and a 3x3 projection,
/// mapping `[N,H,W,3]` to `[N,H/4,W/4,c]`. Views never mix.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub stages: [Conv2d; 2],
    pub proj: Conv2d,
    pub channels: usize,
}

impl Encoder {
    pub const DOWNSAMPLE: usize = 4;

    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Encoder {
            stages: [
                Conv2d::new(store, &format!("{name}.stage0"), 3, 3, channels, 2, 1, rng)?,
                Conv2d::new(store, &format!("{name}.stage1"), 3, channels, channels, 2, 1, rng)?,
            ],
            proj: Conv2d::new(store, &format!("{name}.proj"), 3, channels, channels, 1, 1, rng)?,
            channels,
        })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, images: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = images.shape();
        if s.len() != 4 || s[3] != 3 {
            return Err(Error::contract("encode", format!("images must be [N,H,W,3], got {s:?}")));
        }
        if s[1] % Self::DOWNSAMPLE != 0 || s[2] % Self::DOWNSAMPLE != 0 {
            return Err(Error::contract(
                "encode",
                format!("{}x{} is not divisible by {}", s[1], s[2], Self::DOWNSAMPLE),
            ));
        }
        let mut x = images;
        for stage in &self.stages {
            x = stage.forward(tape, store, x)?.silu()?;
        }
        self.proj.forward(tape, store, x)
    }
}
