//! The reconstruction network: encoder, plane-sweep fusion, camera-aware
//! transformer over Plücker-embedded tokens, and Gaussian/auxiliary decoders.

mod decoder;
mod encoder;
pub mod layers;
mod transformer;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::camera::{inverse_depth_samples, plane_sweep, plucker_map, Camera, DepthSamples};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::gaussian::{activate_map, ActivationStats, GaussianSet, PixelGeometry, ScaleRange, DISTANCE};
use crate::tensor::{concat, ParamStore, Real, Tape, Tensor, Var};
use crate::volume::{build_volume, fuse, multi_view_average, FusionWeights, LatentVolume};

pub use decoder::{Decoder, ResBlock, UpStage};
pub use encoder::Encoder;
pub use transformer::{Attention, Block, PosEmb, SwiGlu, Transformer};

/// Initial head biases of the Gaussian decoder for the 11 direct channels.
const GAUSSIAN_HEAD_BIAS: [f64; 11] = [0.5, 0.5, 0.5, -2.5, -2.5, -2.5, 1.0, 0.0, 0.0, 0.0, 0.0];
const HEAD_WEIGHT_SCALE: f64 = 0.1;

/// One reconstruction request: posed context images and optional target poses.
#[derive(Debug, Clone)]
pub struct SceneInput<T> {
    /// `[N,H,W,3]` in `[0,1]`.
    pub images: Tensor<T>,
    pub cameras: Vec<Camera>,
    /// Target cameras whose tokens join the sequence (may be empty).
    pub targets: Vec<Camera>,
    pub near: f64,
    pub far: f64,
}

impl<T: Real> SceneInput<T> {
    pub fn views(&self) -> usize {
        self.cameras.len()
    }

    fn validate(&self) -> Result<(usize, usize)> {
        let s = self.images.shape();
        if s.len() != 4 || s[3] != 3 || s[0] != self.cameras.len() {
            return Err(Error::contract(
                "model",
                format!("images {s:?} do not match {} cameras", self.cameras.len()),
            ));
        }
        if self.cameras.len() < 2 {
            return Err(Error::contract("model", "need at least two context views"));
        }
        for cam in self.cameras.iter().chain(&self.targets) {
            if cam.height() != s[1] || cam.width() != s[2] {
                return Err(Error::contract("model", "all cameras must share the image resolution"));
            }
        }
        Ok((s[1], s[2]))
    }
}

/// Everything a forward pass produces.
#[derive(Debug, Clone)]
pub struct ModelOutput<'t, T: Real> {
    /// Context splats followed by target-token splats.
    pub gaussians: GaussianSet<'t, T>,
    /// `[N,H,W,12]`
    pub context_raw: Var<'t, T>,
    /// `[M,H,W,12]` when target tokens were supplied.
    pub target_raw: Option<Var<'t, T>>,
    /// `[M,H,W,3]` auxiliary predictions.
    pub aux_images: Option<Var<'t, T>>,
    /// Averaged volume per reference view.
    pub volumes: Vec<LatentVolume<'t, T>>,
    /// Full token sequence entering the transformer `[T, c']`.
    pub tokens: Var<'t, T>,
    /// Zero feature tokens of the target views `[M*h*w, c']`.
    pub target_tokens: Option<Var<'t, T>>,
    pub stats: ActivationStats,
}

#[derive(Debug, Clone)]
pub struct H3rModel<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub encoder: Encoder,
    pub fusion: FusionWeights,
    pub transformer: Transformer,
    pub decoder: Decoder,
    pub aux: Option<Decoder>,
}

impl<T: Real> H3rModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let p = &mut params;
        let c = config.latent_channels;
        let encoder = Encoder::new(p, "encoder", c, &mut rng)?;
        let volume_ch = config.cost_strategy.channels(config.depth_planes, c);
        let fusion = FusionWeights::new(p, "fusion", c, volume_ch, config.hidden, &mut rng)?;
        let transformer = Transformer::new(p, "transformer", &config, &mut rng)?;
        let out = GAUSSIAN_HEAD_BIAS.len() + config.distance_bins;
        let decoder = Decoder::new(p, "decoder", config.hidden, config.decoder_channels, out, &mut rng)?;
        let mut bias = GAUSSIAN_HEAD_BIAS.to_vec();
        bias.resize(out, 0.0);
        decoder.set_head_bias(p, &bias)?;
        scale_param(p, decoder.head.weight, HEAD_WEIGHT_SCALE);
        let aux = if config.aux_head {
            let d = Decoder::new(p, "aux", config.hidden, config.decoder_channels, 3, &mut rng)?;
            scale_param(p, d.head.weight, HEAD_WEIGHT_SCALE);
            Some(d)
        } else {
            None
        };
        if config.freeze_encoder {
            params.set_trainable("encoder.", false);
        }
        Ok(H3rModel { config, params, encoder, fusion, transformer, decoder, aux })
    }

    pub fn scale_range(&self) -> ScaleRange {
        ScaleRange { min: self.config.scale_min, max: self.config.scale_max }
    }

    pub fn sweep_samples(&self, near: f64, far: f64) -> Result<DepthSamples> {
        inverse_depth_samples(near, far, self.config.depth_planes)
    }

    pub fn distance_samples(&self, near: f64, far: f64) -> Result<DepthSamples> {
        inverse_depth_samples(near, far, self.config.distance_bins)
    }

    /// Encodes views independently: `[N,H,W,3] -> [N,H/4,W/4,c]`.
    pub fn encode<'t>(&self, tape: &'t Tape<T>, images: Var<'t, T>) -> Result<Var<'t, T>> {
        self.encoder.forward(tape, &self.params, images)
    }

    /// Averaged latent volume of every context view against all others.
    pub fn volumes<'t>(
        &self,
        latents: Var<'t, T>,
        cameras: &[Camera],
        samples: &DepthSamples,
    ) -> Result<Vec<LatentVolume<'t, T>>> {
        let s = latents.shape();
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        let lat_cams: Vec<Camera> = cameras
            .iter()
            .map(|cam| cam.downsampled(Encoder::DOWNSAMPLE))
            .collect::<Result<_>>()?;
        let views: Vec<Var<'t, T>> = (0..n)
            .map(|v| latents.narrow(0, v, 1)?.reshape(&[h, w, c]))
            .collect::<Result<_>>()?;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut pairwise = Vec::with_capacity(n - 1);
            for j in (0..n).filter(|&j| j != i) {
                let (sweep, _) = plane_sweep(views[j], &lat_cams[i], &lat_cams[j], samples)?;
                pairwise.push(build_volume(views[i], sweep, self.config.cost_strategy)?.between(i, j));
            }
            out.push(multi_view_average(&pairwise)?);
        }
        Ok(out)
    }

    /// Plücker rays at latent resolution, `[views*h*w, 6]`.
    pub fn latent_rays(&self, cameras: &[Camera]) -> Result<Tensor<T>> {
        let mut data = Vec::new();
        for cam in cameras {
            data.extend_from_slice(plucker_map::<T>(&cam.downsampled(Encoder::DOWNSAMPLE)?).data());
        }
        let n = data.len() / 6;
        Tensor::new(&[n, 6], data)
    }

    /// Gaussian decoder output as a 12-channel raw map `[N,H,W,12]`.
    pub fn decode_gaussians<'t>(
        &self,
        tape: &'t Tape<T>,
        z: Var<'t, T>,
        distance: &DepthSamples,
    ) -> Result<Var<'t, T>> {
        let out = self.decoder.forward(tape, &self.params, z)?;
        let s = out.shape();
        let direct = out.narrow(3, 0, DISTANCE)?;
        let t = out
            .narrow(3, DISTANCE, self.config.distance_bins)?
            .ray_distance(distance)?
            .reshape(&[s[0], s[1], s[2], 1])?;
        concat(&[direct, t], 3)
    }

    /// Auxiliary RGB prediction `[M,H,W,3]` from target tokens.
    pub fn predict_target_views<'t>(&self, tape: &'t Tape<T>, z: Var<'t, T>) -> Result<Option<Var<'t, T>>> {
        match &self.aux {
            Some(aux) => Ok(Some(aux.forward(tape, &self.params, z)?.sigmoid()?)),
            None => Ok(None),
        }
    }

    pub fn forward<'t>(&self, tape: &'t Tape<T>, input: &SceneInput<T>) -> Result<ModelOutput<'t, T>> {
        let (height, width) = input.validate()?;
        let (h, w) = (height / Encoder::DOWNSAMPLE, width / Encoder::DOWNSAMPLE);
        let n = input.views();
        let m = input.targets.len();
        let hidden = self.config.hidden;
        let images = tape.constant(input.images.clone());
        let latents = self.encode(tape, images)?;
        let sweep_samples = self.sweep_samples(input.near, input.far)?;
        let volumes = self.volumes(latents, &input.cameras, &sweep_samples)?;
        let c = self.config.latent_channels;
        let mut tokens = Vec::with_capacity(n + 1);
        for (i, vol) in volumes.iter().enumerate() {
            let x_i = latents.narrow(0, i, 1)?.reshape(&[h, w, c])?;
            let z = fuse(tape, &self.params, x_i, vol, &self.fusion)?;
            tokens.push(z.reshape(&[h * w, hidden])?);
        }
        let mut all_cams = input.cameras.clone();
        let target_tokens = if m > 0 {
            let zeros = tape.constant(Tensor::zeros(&[m * h * w, hidden]));
            tokens.push(zeros);
            all_cams.extend_from_slice(&input.targets);
            Some(zeros)
        } else {
            None
        };
        let z = concat(&tokens, 0)?;
        let rays = tape.constant(self.latent_rays(&all_cams)?);
        let out = self.transformer.forward(tape, &self.params, z, rays)?;
        let distance = self.distance_samples(input.near, input.far)?;
        let ctx = out.narrow(0, 0, n * h * w)?.reshape(&[n, h, w, hidden])?;
        let context_raw = self.decode_gaussians(tape, ctx, &distance)?;
        let (mut gaussians, mut stats) = activate_map(
            context_raw,
            &PixelGeometry::new(&input.cameras)?,
            self.scale_range(),
        )?;
        let (mut target_raw, mut aux_images) = (None, None);
        if m > 0 {
            let tz = out.narrow(0, n * h * w, m * h * w)?.reshape(&[m, h, w, hidden])?;
            let raw = self.decode_gaussians(tape, tz, &distance)?;
            let (tg, ts) = activate_map(raw, &PixelGeometry::new(&input.targets)?, self.scale_range())?;
            gaussians = GaussianSet::concat(&[gaussians, tg])?;
            stats.degenerate_rotations += ts.degenerate_rotations;
            target_raw = Some(raw);
            aux_images = self.predict_target_views(tape, tz)?;
        }
        Ok(ModelOutput {
            gaussians,
            context_raw,
            target_raw,
            aux_images,
            volumes,
            tokens: z,
            target_tokens,
            stats,
        })
    }
}

fn scale_param<T: Real>(store: &mut ParamStore<T>, id: crate::tensor::ParamId, s: f64) {
    let p = store.get_mut(id);
    p.value = p.value.map(|v| v * T::of(s));
}
