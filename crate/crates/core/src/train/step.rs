use rand::Rng;
use serde::Serialize;

use super::ema::EmaState;
use super::loss::{reconstruction_loss, LossParts, LossWeights};
use super::schedule::Schedule;
use crate::camera::Camera;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::network::{H3rModel, SceneInput};
use crate::raster::render_set;
use crate::tensor::optim::{clip_store_grads, Adam};
use crate::tensor::{concat, Real, Tape, Tensor, Var};

/// One training scene: context input plus ground-truth target views.
#[derive(Debug, Clone)]
pub struct TrainSample<T> {
    /// Context views; `targets` is ignored and filled per step.
    pub input: SceneInput<T>,
    pub target_cameras: Vec<Camera>,
    /// `[M,H,W,3]`
    pub target_images: Tensor<T>,
}

impl<T: Real> TrainSample<T> {
    /// Keeps only the listed target views.
    pub fn select_targets(&self, idx: &[usize]) -> Result<Self> {
        let s = self.target_images.shape();
        let per: usize = s[1..].iter().product();
        let mut data = Vec::with_capacity(idx.len() * per);
        let mut cams = Vec::with_capacity(idx.len());
        for &i in idx {
            let cam = self.target_cameras.get(i).ok_or_else(|| Error::Data(format!("no target view {i}")))?;
            cams.push(*cam);
            data.extend_from_slice(&self.target_images.data()[i * per..(i + 1) * per]);
        }
        let mut shape = s.to_vec();
        shape[0] = idx.len();
        Ok(TrainSample { input: self.input.clone(), target_cameras: cams, target_images: Tensor::new(&shape, data)? })
    }

    /// Mirrors every image left-right and reflects all cameras to match.
    pub fn flipped(&self) -> Self {
        let flip_cams = |c: &[Camera]| c.iter().map(Camera::flipped_horizontally).collect::<Vec<_>>();
        TrainSample {
            input: SceneInput {
                images: flip_images(&self.input.images),
                cameras: flip_cams(&self.input.cameras),
                targets: flip_cams(&self.input.targets),
                near: self.input.near,
                far: self.input.far,
            },
            target_cameras: flip_cams(&self.target_cameras),
            target_images: flip_images(&self.target_images),
        }
    }
}

/// Reverses the width axis of `[N,H,W,C]`.
pub fn flip_images<T: Real>(images: &Tensor<T>) -> Tensor<T> {
    let s = images.shape();
    let (w, c) = (s[2], s[3]);
    let mut out = images.clone();
    for (dst, src) in out.data_mut().chunks_mut(w * c).zip(images.data().chunks(w * c)) {
        for x in 0..w {
            dst[x * c..(x + 1) * c].copy_from_slice(&src[(w - 1 - x) * c..(w - x) * c]);
        }
    }
    out
}

/// Loss of one scene, split into the render and auxiliary terms.
#[derive(Debug, Clone, Copy)]
pub struct SceneLoss<'t, T: Real> {
    pub total: Var<'t, T>,
    pub render: LossParts<'t, T>,
    pub aux: Option<LossParts<'t, T>>,
    /// Renders stacked `[M,H,W,3]`.
    pub renders: Var<'t, T>,
}

pub fn loss_weights(cfg: &TrainConfig) -> LossWeights {
    LossWeights {
        lambda_perceptual: cfg.lambda_perceptual,
        perceptual: cfg.perceptual,
        gradient: cfg.gradient_loss,
    }
}

/// Forward pass, target renders and losses for one sample. With
/// `with_target_poses` the target cameras join the token sequence and the
/// auxiliary head (when present) adds its loss.
pub fn scene_loss<'t, T: Real>(
    model: &H3rModel<T>,
    tape: &'t Tape<T>,
    sample: &TrainSample<T>,
    with_target_poses: bool,
    cfg: &TrainConfig,
) -> Result<SceneLoss<'t, T>> {
    let mut input = sample.input.clone();
    input.targets = if with_target_poses { sample.target_cameras.clone() } else { Vec::new() };
    let out = model.forward(tape, &input)?;
    let m = sample.target_cameras.len();
    let mut renders = Vec::with_capacity(m);
    for cam in &sample.target_cameras {
        let (color, _) = render_set(&out.gaussians, cam, cfg.background)?;
        renders.push(color.reshape(&[1, cam.height(), cam.width(), 3])?);
    }
    let renders = concat(&renders, 0)?;
    let gt = tape.constant(sample.target_images.clone());
    let weights = loss_weights(cfg);
    let render = reconstruction_loss(renders, gt, &weights, None)?;
    let mut total = render.total;
    let aux = match out.aux_images {
        Some(pred) => {
            let parts = reconstruction_loss(pred, gt, &weights, None)?;
            total = total.add(parts.total.scale(T::of(cfg.aux_weight))?)?;
            Some(parts)
        }
        None => None,
    };
    Ok(SceneLoss { total, render, aux, renders })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub loss: f64,
    pub mse: f64,
    pub grad_mae: f64,
    pub psnr_train: f64,
    pub lr: f64,
    #[serde(skip)]
    pub grad_norm: f64,
    #[serde(skip)]
    pub aux_loss: Option<f64>,
    #[serde(skip)]
    pub flipped: bool,
    #[serde(skip)]
    pub target_poses: bool,
}

/// Mutable state threaded through training steps.
pub struct StepContext<'a, T: Real, R: Rng> {
    pub optimizer: &'a mut Adam<T>,
    pub schedule: &'a Schedule,
    pub ema: &'a mut EmaState<T>,
    pub rng: &'a mut R,
    pub config: &'a TrainConfig,
}

/// One optimizer step over `batch` (gradients averaged across scenes).
pub fn train_step<T: Real, R: Rng>(
    model: &mut H3rModel<T>,
    batch: &[TrainSample<T>],
    step: usize,
    ctx: StepContext<'_, T, R>,
) -> Result<StepMetrics> {
    if batch.is_empty() {
        return Err(Error::contract("train_step", "empty batch"));
    }
    let cfg = ctx.config;
    let lr = ctx.schedule.lr_at(step);
    let mut metrics = StepMetrics { step, lr, ..StepMetrics::default() };
    model.params.zero_grad();
    let share = 1.0 / batch.len() as f64;
    let mut aux_sum = None;
    for sample in batch {
        let flip = ctx.rng.random_bool(cfg.flip_prob);
        let with_targets = ctx.rng.random_bool(cfg.target_pose_prob);
        let picked;
        let sample = match cfg.targets_per_step {
            k if k > 0 && k < sample.target_cameras.len() => {
                let mut idx = rand::seq::index::sample(ctx.rng, sample.target_cameras.len(), k).into_vec();
                idx.sort_unstable();
                picked = sample.select_targets(&idx)?;
                &picked
            }
            _ => sample,
        };
        let flipped;
        let sample = if flip {
            flipped = sample.flipped();
            &flipped
        } else {
            sample
        };
        let tape = Tape::new();
        let loss = scene_loss(model, &tape, sample, with_targets, cfg)?;
        let value = loss.total.item().f64();
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "train_step" });
        }
        let grads = tape.backward(loss.total.scale(T::of(share))?)?;
        grads.accumulate_into(&mut model.params);
        metrics.loss += share * value;
        metrics.mse += share * loss.render.mse;
        metrics.grad_mae += share * loss.render.grad_mae;
        if let Some(a) = loss.aux {
            *aux_sum.get_or_insert(0.0) += share * a.total.item().f64();
        }
        metrics.flipped |= flip;
        metrics.target_poses |= with_targets;
    }
    metrics.aux_loss = aux_sum;
    metrics.grad_norm = clip_store_grads(&mut model.params, cfg.grad_clip);
    if !metrics.grad_norm.is_finite() {
        return Err(Error::NonFinite { op: "train_step" });
    }
    ctx.optimizer.step(&mut model.params, lr)?;
    ctx.ema.update(&model.params)?;
    metrics.psnr_train = crate::eval::psnr_from_mse(metrics.mse, 1.0);
    Ok(metrics)
}
