//! Fixtures and oracles shared by the integration tests.
#![allow(dead_code)]

use h3r_core::camera::{Camera, Intrinsics, Pose, Vec3};
use h3r_core::config::ModelConfig;
use h3r_core::network::{H3rModel, SceneInput};
use h3r_core::tensor::gradcheck::{GradCheckConfig, GradCheckReport};
use h3r_core::tensor::{ParamId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn assert_passes(name: &str, report: GradCheckReport) {
    assert!(report.passed(), "{name}: {:?} over {} probes", report.worst, report.probes);
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        latent_channels: 8,
        hidden: 16,
        layers: 1,
        heads: 2,
        mlp_hidden: 24,
        depth_planes: 4,
        distance_bins: 6,
        decoder_channels: [8, 4],
        ..ModelConfig::default()
    }
}

pub fn cameras(n: usize, size: usize) -> Vec<Camera> {
    let k = Intrinsics::from_fov(60.0, size, size).unwrap();
    (0..n)
        .map(|i| {
            let eye = Vec3::new(0.3 * i as f64 - 0.2, 0.05 * i as f64, 0.0);
            Camera::new(k, Pose::look_at(eye, Vec3::new(0.0, 0.0, 4.0), -Vec3::y()).unwrap())
        })
        .collect()
}

pub fn scene(n: usize, size: usize, seed: u64, targets: usize) -> SceneInput<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cams = cameras(n + targets, size);
    SceneInput {
        images: Tensor::from_fn(&[n, size, size, 3], |_| rng.random_range(0.0..1.0)),
        cameras: cams[..n].to_vec(),
        targets: cams[n..].to_vec(),
        near: 1.0,
        far: 10.0,
    }
}

pub fn ids_with_prefix(model: &H3rModel<f64>, prefix: &str) -> Vec<ParamId> {
    model.params.iter().filter(|(_, p)| p.name.starts_with(prefix)).map(|(id, _)| id).collect()
}

pub fn probes(n: usize) -> GradCheckConfig {
    GradCheckConfig { max_probes_per_input: n, ..GradCheckConfig::default() }
}

/// Bilinear lookup from the pixel-centre convention; points need all four
/// neighbours inside the map (up to a 1e-5 px edge slack).
pub fn sample_brute(src: &Tensor<f64>, x: f64, y: f64) -> Option<Vec<f64>> {
    let s = src.shape();
    let (h, w, c) = (s[0], s[1], s[2]);
    let inside = |v: f64, n: usize| v >= -1e-5 && v <= (n - 1) as f64 + 1e-5;
    if !inside(x, w) || !inside(y, h) {
        return None;
    }
    let (x, y) = (x.clamp(0.0, (w - 1) as f64), y.clamp(0.0, (h - 1) as f64));
    let mut out = vec![0.0; c];
    for yi in 0..h {
        for xi in 0..w {
            let wgt = (1.0 - (x - xi as f64).abs()).max(0.0) * (1.0 - (y - yi as f64).abs()).max(0.0);
            for k in 0..c {
                out[k] += wgt * src.data()[(yi * w + xi) * c + k];
            }
        }
    }
    Some(out)
}


/// Windowed SSIM written out term by term with a 2-D Gaussian window.
pub fn ssim_direct(a: &[f64], b: &[f64], h: usize, w: usize, c: usize) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let norm: f64 = g.iter().sum::<f64>().powi(2);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut per_channel = 0.0;
    for ch in 0..c {
        let px = |img: &[f64], y: usize, x: usize| img[(y * w + x) * c + ch];
        let mut sum = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = g[i] * g[j] / norm;
                        let (p, q) = (px(a, y0 + i, x0 + j), px(b, y0 + i, x0 + j));
                        mx += wt * p;
                        my += wt * q;
                        sxx += wt * p * p;
                        syy += wt * q * q;
                        sxy += wt * p * q;
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                sum += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        per_channel += sum / count as f64;
    }
    per_channel / c as f64
}
