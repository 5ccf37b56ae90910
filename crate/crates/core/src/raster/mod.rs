//! Differentiable CPU splatting renderer.
//!
//! Gaussians are projected with the local affine approximation of the
//! perspective map, sorted by camera depth (ties by input index), binned
//! into 16x16 tiles and alpha-composited front to back. A splat touches a
//! pixel inside its 3-sigma ellipse when its alpha reaches 1/255; alpha is
//! clamped to 0.99 and compositing stops once transmittance drops below 1e-4.

mod composite;
mod project;

use std::sync::Arc;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian3D, GaussianSet};
use crate::tensor::{Real, Tensor, Var};

pub use composite::{ALPHA_MAX, ALPHA_MIN, TILE, T_MIN};
pub use project::{project, Splat2D, LOW_PASS, NEAR_CULL, SIGMA_CUTOFF};

use composite::{Frame, PixelOut};
use project::project_backward;

/// Rendered image `[H,W,3]`, accumulated alpha `[H,W]` and expected depth
/// `[H,W]` (weighted by contribution, not normalised).
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput<T> {
    pub color: Tensor<T>,
    pub alpha: Tensor<T>,
    pub depth: Tensor<T>,
}

fn assemble<T: Real>(pixels: &[PixelOut], h: usize, w: usize) -> RenderOutput<T> {
    let mut color = Vec::with_capacity(h * w * 3);
    let mut alpha = Vec::with_capacity(h * w);
    let mut depth = Vec::with_capacity(h * w);
    for p in pixels {
        color.extend(p.rgb.iter().map(|&v| T::of(v)));
        alpha.push(T::of(1.0 - p.transmittance));
        depth.push(T::of(p.depth));
    }
    RenderOutput {
        color: Tensor::new(&[h, w, 3], color).expect("pixel count"),
        alpha: Tensor::new(&[h, w], alpha).expect("pixel count"),
        depth: Tensor::new(&[h, w], depth).expect("pixel count"),
    }
}

/// Tiled renderer.
pub fn render(gaussians: &[Gaussian3D], camera: &Camera, background: [f64; 3]) -> RenderOutput<f64> {
    let frame = Frame::new(gaussians, camera, background);
    assemble(&frame.render_tiled(), camera.height(), camera.width())
}

/// Untiled reference renderer: every pixel scans the whole sorted list.
pub fn render_naive(gaussians: &[Gaussian3D], camera: &Camera, background: [f64; 3]) -> RenderOutput<f64> {
    let frame = Frame::new(gaussians, camera, background);
    assemble(&frame.render_naive(), camera.height(), camera.width())
}

/// Renders a tape-resident splat set. The color output is differentiable
/// with respect to centers, scales, rotations, opacities and colors.
pub fn render_set<'t, T: Real>(
    set: &GaussianSet<'t, T>,
    camera: &Camera,
    background: [f64; 3],
) -> Result<(Var<'t, T>, RenderOutput<T>)> {
    let n = set.len();
    let shapes = [
        (set.centers.shape(), vec![n, 3]),
        (set.scales.shape(), vec![n, 3]),
        (set.rotations.shape(), vec![n, 4]),
        (set.colors.shape(), vec![n, 3]),
    ];
    for (got, want) in &shapes {
        if got != want {
            return Err(Error::shape("render", got, want));
        }
    }
    let gaussians = set.to_gaussians();
    let frame = Arc::new(Frame::new(&gaussians, camera, background));
    let (h, w) = (camera.height(), camera.width());
    let out = assemble::<T>(&frame.render_tiled(), h, w);
    let ids = [
        set.centers.index(),
        set.scales.index(),
        set.rotations.index(),
        set.opacities.index(),
        set.colors.index(),
    ];
    let camera = *camera;
    let inputs = [set.centers, set.scales, set.rotations, set.opacities, set.colors];
    let color = set.centers.tape().op("render", &inputs, out.color.clone(), move |g, sink| {
        let d_color: Vec<f64> = g.iter().map(|v| v.f64()).collect();
        let screen = frame.backward(&d_color);
        let mut d = [
            vec![0.0f64; n * 3],
            vec![0.0f64; n * 3],
            vec![0.0f64; n * 4],
            vec![0.0f64; n],
            vec![0.0f64; n * 3],
        ];
        for (p, sg) in frame.splats.iter().zip(&screen) {
            let gg = project_backward(p, sg, &camera);
            let i = p.splat.index;
            d[0][3 * i..3 * i + 3].copy_from_slice(&gg.center);
            d[1][3 * i..3 * i + 3].copy_from_slice(&gg.scale);
            d[2][4 * i..4 * i + 4].copy_from_slice(&gg.rotation);
            d[3][i] = gg.opacity;
            d[4][3 * i..3 * i + 3].copy_from_slice(&gg.rgb);
        }
        for (id, grad) in ids.iter().zip(&d) {
            if let Some(slot) = sink.slot(*id) {
                for (s, &v) in slot.iter_mut().zip(grad) {
                    *s = *s + T::of(v);
                }
            }
        }
    })?;
    Ok((color, out))
}
