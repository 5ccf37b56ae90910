use rand::Rng;

use super::layers::{LayerNorm, Linear};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Affine embedding of 6-channel Plücker rays into the token width.
#[derive(Debug, Clone)]
pub struct PosEmb {
    pub proj: Linear,
}

impl PosEmb {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, hidden: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(PosEmb { proj: Linear::new(store, name, 6, hidden, true, rng)? })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, rays: Var<'t, T>) -> Result<Var<'t, T>> {
        if rays.shape().last() != Some(&6) {
            return Err(Error::contract("pos_embed", format!("rays must end in 6 channels, got {:?}", rays.shape())));
        }
        self.proj.forward(tape, store, rays)
    }
}

/// Multi-head self-attention with L2-normalised queries and keys scaled by a
/// learnable per-head temperature.
#[derive(Debug, Clone)]
pub struct Attention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
    /// `[heads, 1, 1]`
    pub temperature: ParamId,
    pub heads: usize,
}

impl Attention {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let c = cfg.hidden;
        Ok(Attention {
            wq: Linear::new(store, &format!("{name}.wq"), c, c, false, rng)?,
            wk: Linear::new(store, &format!("{name}.wk"), c, c, false, rng)?,
            wv: Linear::new(store, &format!("{name}.wv"), c, c, false, rng)?,
            wo: Linear::new(store, &format!("{name}.wo"), c, c, false, rng)?,
            temperature: store.insert(
                format!("{name}.temperature"),
                Tensor::full(&[cfg.heads, 1, 1], T::of(cfg.temperature())),
            )?,
            heads: cfg.heads,
        })
    }

    fn split_heads<'t, T: Real>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        let (t, c) = (s[0], s[1]);
        x.reshape(&[t, self.heads, c / self.heads])?.permute(&[1, 0, 2])
    }

    /// Pre-softmax logits `[heads, T, T]` for normalised inputs.
    pub fn logits<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let eps = T::of(1e-6);
        let q = self.split_heads(self.wq.forward(tape, store, x)?)?.l2_normalize(eps)?;
        let k = self.split_heads(self.wk.forward(tape, store, x)?)?.l2_normalize(eps)?;
        q.matmul(k.transpose()?)?.mul(tape.param(store, self.temperature))
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        let attn = self.logits(tape, store, x)?.softmax(2)?;
        let v = self.split_heads(self.wv.forward(tape, store, x)?)?;
        let merged = attn.matmul(v)?.permute(&[1, 0, 2])?.reshape(&[s[0], s[1]])?;
        self.wo.forward(tape, store, merged)
    }
}

/// Gated feed-forward: `(silu(x W1) * x W3) W2`.
#[derive(Debug, Clone)]
pub struct SwiGlu {
    pub w1: Linear,
    pub w3: Linear,
    pub w2: Linear,
}

impl SwiGlu {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(SwiGlu {
            w1: Linear::new(store, &format!("{name}.w1"), cfg.hidden, cfg.mlp_hidden, false, rng)?,
            w3: Linear::new(store, &format!("{name}.w3"), cfg.hidden, cfg.mlp_hidden, false, rng)?,
            w2: Linear::new(store, &format!("{name}.w2"), cfg.mlp_hidden, cfg.hidden, false, rng)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let gate = self.w1.forward(tape, store, x)?.silu()?;
        let up = self.w3.forward(tape, store, x)?;
        self.w2.forward(tape, store, gate.mul(up)?)
    }
}

#[derive(Debug, Clone)]
pub struct Block {
    pub norm1: LayerNorm,
    pub attn: Attention,
    pub norm2: LayerNorm,
    pub ffn: SwiGlu,
}

impl Block {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        Ok(Block {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), cfg.hidden)?,
            attn: Attention::new(store, &format!("{name}.attn"), cfg, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), cfg.hidden)?,
            ffn: SwiGlu::new(store, &format!("{name}.ffn"), cfg, rng)?,
        })
    }

    pub fn forward<'t, T: Real>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, z: Var<'t, T>) -> Result<Var<'t, T>> {
        let z = z.add(self.attn.forward(tape, store, self.norm1.forward(tape, store, z)?)?)?;
        z.add(self.ffn.forward(tape, store, self.norm2.forward(tape, store, z)?)?)
    }
}

/// Ray embedding, a stack of pre-norm blocks and a closing LayerNorm.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub pos_emb: PosEmb,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
    pub hidden: usize,
}

impl Transformer {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        let pos_emb = PosEmb::new(store, &format!("{name}.pos_emb"), cfg.hidden, rng)?;
        let blocks = (0..cfg.layers)
            .map(|i| Block::new(store, &format!("{name}.{i}"), cfg, rng))
            .collect::<Result<_>>()?;
        let norm = LayerNorm::new(store, &format!("{name}.norm"), cfg.hidden)?;
        Ok(Transformer { pos_emb, blocks, norm, hidden: cfg.hidden })
    }

    /// Tokens `[T, c']` with rays `[T, 6]` to tokens `[T, c']`.
    pub fn forward<'t, T: Real>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        z: Var<'t, T>,
        rays: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let (zs, rs) = (z.shape(), rays.shape());
        if zs.len() != 2 || zs[1] != self.hidden || rs.len() != 2 || rs[0] != zs[0] {
            return Err(Error::shape("transformer", &zs, &rs));
        }
        let mut z = z.add(self.pos_emb.forward(tape, store, rays)?)?;
        for block in &self.blocks {
            z = block.forward(tape, store, z)?;
        }
        self.norm.forward(tape, store, z)
    }
}
