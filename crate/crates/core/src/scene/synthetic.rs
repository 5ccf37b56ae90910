//! Procedural scenes rendered by exact ray casting.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{quantize, Role, SceneBundle, SceneView};
use crate::camera::{Camera, Intrinsics, Pose, Vec3};
use crate::config::DataConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAX_RETRIES: u64 = 16;
const SCENE_NEAR: f64 = 1.0;
const SCENE_FAR: f64 = 20.0;
/// Point every camera looks at.
const LOOK_AT: [f64; 3] = [0.0, 0.0, 4.5];
const WALL_Z: f64 = 7.5;
const FLOOR_Y: f64 = 1.3;

/// Sinusoid and checker mix between two colours over surface coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Texture {
    pub base: [f64; 3],
    pub alt: [f64; 3],
    /// Cycles per world unit along u and v.
    pub freq: [f64; 2],
    pub phase: f64,
    /// Side of one checker square in world units.
    pub checker: f64,
    pub checker_weight: f64,
}

impl Texture {
    pub fn color(&self, u: f64, v: f64) -> [f64; 3] {
        let s = 0.5 + 0.5 * (2.0 * PI * (self.freq[0] * u + self.freq[1] * v) + self.phase).sin();
        let ch = ((u / self.checker).floor() + (v / self.checker).floor()).rem_euclid(2.0);
        let w = (1.0 - self.checker_weight) * s + self.checker_weight * ch;
        [0, 1, 2].map(|k| self.base[k] + (self.alt[k] - self.base[k]) * w)
    }

    fn random(rng: &mut impl Rng) -> Self {
        let mut col = || [0; 3].map(|_| rng.random_range(0.1..0.9));
        let (base, alt) = (col(), col());
        Texture {
            base,
            alt,
            freq: [rng.random_range(0.15..0.45), rng.random_range(0.15..0.45)],
            phase: rng.random_range(0.0..2.0 * PI),
            checker: rng.random_range(1.2..2.4),
            checker_weight: rng.random_range(0.1..0.25),
        }
    }
}

/// Infinite plane through `point` with in-plane axes `u`, `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub point: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub texture: Texture,
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3 {
    pub min: Vec3,
    pub max: Vec3,
    pub texture: Texture,
}

impl Box3 {
    pub fn contains(&self, p: &Vec3, margin: f64) -> bool {
        (0..3).all(|k| p[k] > self.min[k] - margin && p[k] < self.max[k] + margin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    Plane(Plane),
    Box(Box3),
}

struct Hit {
    t: f64,
    color: [f64; 3],
}

impl Surface {
    fn intersect(&self, o: &Vec3, d: &Vec3) -> Option<Hit> {
        match self {
            Surface::Plane(p) => {
                let n = p.u.cross(&p.v).normalize();
                let den = d.dot(&n);
                if den.abs() < 1e-12 {
                    return None;
                }
                let t = (p.point - o).dot(&n) / den;
                if t <= 1e-9 {
                    return None;
                }
                let x = o + d * t - p.point;
                let c = p.texture.color(x.dot(&p.u), x.dot(&p.v));
                Some(Hit { t, color: shade(c, &n, d) })
            }
            Surface::Box(b) => {
                let (mut t0, mut t1, mut axis) = (f64::NEG_INFINITY, f64::INFINITY, 0);
                for k in 0..3 {
                    if d[k].abs() < 1e-15 {
                        if o[k] < b.min[k] || o[k] > b.max[k] {
                            return None;
                        }
                        continue;
                    }
                    let (a, c) = ((b.min[k] - o[k]) / d[k], (b.max[k] - o[k]) / d[k]);
                    let (near, far) = if a < c { (a, c) } else { (c, a) };
                    if near > t0 {
                        t0 = near;
                        axis = k;
                    }
                    t1 = t1.min(far);
                }
                if t0 > t1 || t0 <= 1e-9 {
                    return None;
                }
                let x = o + d * t0;
                let (i, j) = ((axis + 1) % 3, (axis + 2) % 3);
                let mut n = Vec3::zeros();
                n[axis] = 1.0;
                let c = b.texture.color(x[i] - b.min[i], x[j] - b.min[j]);
                Some(Hit { t: t0, color: shade(c, &n, d) })
            }
        }
    }
}

fn shade(c: [f64; 3], n: &Vec3, d: &Vec3) -> [f64; 3] {
    let k = 0.7 + 0.3 * n.dot(d).abs();
    c.map(|v| (v * k).clamp(0.0, 1.0))
}

fn closest(surfaces: &[Surface], o: &Vec3, d: &Vec3) -> Option<Hit> {
    surfaces
        .iter()
        .filter_map(|s| s.intersect(o, d))
        .min_by(|a, b| a.t.total_cmp(&b.t))
}

/// Ray-cast image `[H,W,3]` (box-filtered over `supersample`² subpixels) and
/// camera-space depth `[H,W]` of pixel centres (0 where nothing is hit).
pub fn render_surfaces(surfaces: &[Surface], camera: &Camera, supersample: usize) -> (Tensor<f64>, Tensor<f64>) {
    let (h, w) = (camera.height(), camera.width());
    let s = supersample.max(1);
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut color = Vec::with_capacity(w * 3);
            let mut depth = Vec::with_capacity(w);
            for x in 0..w {
                let mut acc = [0.0; 3];
                for sy in 0..s {
                    for sx in 0..s {
                        let u = x as f64 + (sx as f64 + 0.5) / s as f64 - 0.5;
                        let v = y as f64 + (sy as f64 + 0.5) / s as f64 - 0.5;
                        let ray = camera.ray(u, v);
                        if let Some(hit) = closest(surfaces, &ray.origin, &ray.direction) {
                            (0..3).for_each(|k| acc[k] += hit.color[k]);
                        }
                    }
                }
                color.extend(acc.map(|a| a / (s * s) as f64));
                let ray = camera.ray(x as f64, y as f64);
                let z = closest(surfaces, &ray.origin, &ray.direction)
                    .map(|hit| camera.pose.transform(&ray.at(hit.t)).z)
                    .unwrap_or(0.0);
                depth.push(z);
            }
            (color, depth)
        })
        .collect();
    let mut color = Vec::with_capacity(h * w * 3);
    let mut depth = Vec::with_capacity(h * w);
    for (c, d) in rows {
        color.extend(c);
        depth.extend(d);
    }
    (Tensor::from_parts(vec![h, w, 3], color), Tensor::from_parts(vec![h, w], depth))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneSpec {
    pub seed: u64,
    pub objects: usize,
    pub context_views: usize,
    pub target_views: usize,
    pub resolution: usize,
    pub supersample: usize,
    pub fov_degrees: f64,
    /// Angular extent of the camera arc.
    pub arc_degrees: f64,
    /// Relative jitter of the arc radius per view.
    pub radius_jitter: f64,
}

impl SyntheticSceneSpec {
    pub fn from_data_config(cfg: &DataConfig, scene_index: usize) -> Self {
        SyntheticSceneSpec {
            seed: cfg.seed.wrapping_mul(1_000_003).wrapping_add(scene_index as u64),
            objects: cfg.objects,
            context_views: cfg.context_views,
            target_views: cfg.target_views,
            resolution: cfg.resolution,
            supersample: cfg.supersample,
            ..Self::default()
        }
    }

    pub fn views(&self) -> usize {
        self.context_views + self.target_views
    }

    /// Context slots spread evenly over the arc, including both ends.
    pub fn roles(&self) -> Vec<Role> {
        let n = self.views();
        let mut roles = vec![Role::Target; n];
        let c = self.context_views;
        for k in 0..c {
            let i = if c == 1 { 0 } else { (k * (n - 1) + (c - 1) / 2) / (c - 1) };
            roles[i] = Role::Context;
        }
        roles
    }
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            seed: 0,
            objects: 3,
            context_views: 2,
            target_views: 1,
            resolution: 64,
            supersample: 2,
            fov_degrees: 60.0,
            arc_degrees: 16.0,
            radius_jitter: 0.05,
        }
    }
}

fn layout(rng: &mut ChaCha8Rng, objects: usize) -> Vec<Surface> {
    let mut s = vec![
        Surface::Plane(Plane {
            point: Vec3::new(0.0, 0.0, WALL_Z),
            u: Vec3::x(),
            v: Vec3::y(),
            texture: Texture::random(rng),
        }),
        Surface::Plane(Plane {
            point: Vec3::new(0.0, FLOOR_Y, 0.0),
            u: Vec3::z(),
            v: Vec3::x(),
            texture: Texture::random(rng),
        }),
    ];
    for _ in 0..objects {
        let c = Vec3::new(rng.random_range(-1.3..1.3), rng.random_range(-0.6..0.9), rng.random_range(3.5..6.0));
        let half = Vec3::new(rng.random_range(0.25..0.6), rng.random_range(0.25..0.6), rng.random_range(0.25..0.6));
        let mut min = c - half;
        let mut max = c + half;
        max.y = max.y.min(FLOOR_Y);
        min.y = min.y.min(max.y - 0.2);
        max.z = max.z.min(WALL_Z);
        s.push(Surface::Box(Box3 { min, max, texture: Texture::random(rng) }));
    }
    s
}

fn arc_cameras(rng: &mut ChaCha8Rng, spec: &SyntheticSceneSpec) -> Result<Vec<Camera>> {
    let k = Intrinsics::from_fov(spec.fov_degrees, spec.resolution, spec.resolution)?;
    let look = Vec3::from(LOOK_AT);
    let n = spec.views();
    let half = spec.arc_degrees.to_radians() / 2.0;
    (0..n)
        .map(|i| {
            let theta = if n == 1 { 0.0 } else { -half + 2.0 * half * i as f64 / (n - 1) as f64 };
            let r = look.z * (1.0 + rng.random_range(-spec.radius_jitter..=spec.radius_jitter));
            let eye = look + Vec3::new(r * theta.sin(), rng.random_range(-0.1..0.1), -r * theta.cos());
            let target = look + Vec3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), 0.0);
            Ok(Camera::new(k, Pose::look_at(eye, target, -Vec3::y())?))
        })
        .collect()
}

/// Builds a scene from `spec`; retries with derived seeds when a camera
/// starts inside an object.
pub fn generate_scene(spec: &SyntheticSceneSpec) -> Result<SceneBundle> {
    if spec.context_views < 2 || spec.target_views == 0 || spec.resolution < 4 {
        return Err(Error::Config("need >= 2 context views, >= 1 target view and resolution >= 4".into()));
    }
    for attempt in 0..MAX_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let surfaces = layout(&mut rng, spec.objects);
        let cameras = arc_cameras(&mut rng, spec)?;
        let blocked = cameras.iter().any(|c| {
            let eye = c.pose.center();
            surfaces.iter().any(|s| matches!(s, Surface::Box(b) if b.contains(&eye, 0.3)))
        });
        if blocked {
            continue;
        }
        let roles = spec.roles();
        let views = cameras
            .iter()
            .zip(roles)
            .enumerate()
            .map(|(i, (cam, role))| {
                let (image, depth) = render_surfaces(&surfaces, cam, spec.supersample);
                SceneView { name: format!("view_{i:03}"), camera: *cam, image: quantize(&image), depth: Some(depth), role }
            })
            .collect();
        return Ok(SceneBundle { views, near: SCENE_NEAR, far: SCENE_FAR });
    }
    Err(Error::Data(format!("could not place cameras outside objects for seed {}", spec.seed)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roles_spread_context_to_the_ends() {
        let spec = SyntheticSceneSpec { context_views: 2, target_views: 3, ..Default::default() };
        assert_eq!(spec.roles(), [Role::Context, Role::Target, Role::Target, Role::Target, Role::Context]);
        let spec = SyntheticSceneSpec { context_views: 3, target_views: 2, ..Default::default() };
        assert_eq!(spec.roles().iter().filter(|r| **r == Role::Context).count(), 3);
    }

    #[test]
    fn texture_is_bounded() {
        let t = Texture { base: [0.1, 0.2, 0.3], alt: [0.9, 0.8, 0.7], freq: [0.5, 0.5], phase: 0.3, checker: 1.0, checker_weight: 0.3 };
        for i in 0..100 {
            let c = t.color(i as f64 * 0.37, i as f64 * -0.11);
            assert!(c.iter().zip([0.1, 0.2, 0.3]).zip([0.9, 0.8, 0.7]).all(|((&v, lo), hi)| v >= lo - 1e-12 && v <= hi + 1e-12));
        }
    }
}
