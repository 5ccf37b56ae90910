//! Activation of raw per-pixel channels into 3D Gaussians.
//!
//! Raw map channel layout (12 channels): `rgb[0..3] scale[3..6] rotation[6..10]
//! opacity[10] distance[11]`, where the distance channel already holds the
//! expected ray distance `t`. Quaternions are `(w, x, y, z)`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::camera::{pixel_rays, Camera, DepthSamples, Ray, Vec3};
use crate::error::{Error, Result};
use crate::tensor::{concat, Real, Tensor, Var};

pub const RAW_CHANNELS: usize = 12;
pub const RGB: std::ops::Range<usize> = 0..3;
pub const SCALE: std::ops::Range<usize> = 3..6;
pub const ROTATION: std::ops::Range<usize> = 6..10;
pub const OPACITY: usize = 10;
pub const DISTANCE: usize = 11;

/// Quaternions shorter than this fall back to the identity rotation.
pub const DEGENERATE_QUAT_NORM: f64 = 1e-8;

/// Image-space scale bounds in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleRange {
    pub min: f64,
    pub max: f64,
}

impl Default for ScaleRange {
    fn default() -> Self {
        ScaleRange { min: 0.5, max: 15.0 }
    }
}

impl ScaleRange {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min > 0.0 && max > min) {
            return Err(Error::contract("scale_range", format!("need 0 < min < max, got {min}, {max}")));
        }
        Ok(ScaleRange { min, max })
    }

    pub fn pixel_scale(&self, logit: f64) -> f64 {
        let w = 1.0 / (1.0 + (-logit).exp());
        (1.0 - w) * self.min + w * self.max
    }
}

/// Softmax-weighted mean of the depth hypotheses.
pub fn ray_distance_scalar(logits: &[f64], samples: &DepthSamples) -> Result<f64> {
    if logits.len() != samples.len() {
        return Err(Error::contract(
            "ray_distance",
            format!("{} logits for {} depth samples", logits.len(), samples.len()),
        ));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok(e.iter().zip(&samples.values).map(|(w, d)| w / z * d).sum())
}

/// World-space scale per axis: `s_pixel * p_world * t`.
pub fn scale_activation(logits: [f64; 3], range: ScaleRange, p_world: f64, t: f64) -> [f64; 3] {
    logits.map(|l| range.pixel_scale(l) * p_world * t)
}

/// Unit quaternion from a raw 4-vector; `true` when the identity fallback was used.
pub fn normalize_quaternion(raw: [f64; 4]) -> ([f64; 4], bool) {
    let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n < DEGENERATE_QUAT_NORM {
        ([1.0, 0.0, 0.0, 0.0], true)
    } else {
        (raw.map(|v| v / n), false)
    }
}

pub fn center_from_distance(ray: &Ray, t: f64) -> Vec3 {
    ray.at(t)
}

/// An activated splat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian3D {
    pub center: [f64; 3],
    pub scale: [f64; 3],
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub rgb: [f64; 3],
}

impl Gaussian3D {
    /// Activates one 12-channel raw record against its pixel ray.
    /// Returns the splat and whether the rotation fell back to identity.
    pub fn from_raw(raw: &[f64; RAW_CHANNELS], ray: &Ray, range: ScaleRange, p_world: f64) -> (Self, bool) {
        let t = raw[DISTANCE];
        let (rotation, degenerate) = normalize_quaternion([raw[6], raw[7], raw[8], raw[9]]);
        let c = center_from_distance(ray, t);
        let g = Gaussian3D {
            center: [c.x, c.y, c.z],
            scale: scale_activation([raw[3], raw[4], raw[5]], range, p_world, t),
            rotation,
            opacity: 1.0 / (1.0 + (-raw[OPACITY]).exp()),
            rgb: [raw[0].max(0.0), raw[1].max(0.0), raw[2].max(0.0)],
        };
        (g, degenerate)
    }

    pub fn validate(&self) -> Result<()> {
        let qn = self.rotation.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ok = (qn - 1.0).abs() < 1e-6
            && self.opacity > 0.0
            && self.opacity < 1.0
            && self.scale.iter().all(|s| s.is_finite() && *s > 0.0)
            && self.rgb.iter().all(|c| *c >= 0.0)
            && self.center.iter().all(|c| c.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::contract("gaussian", format!("invalid splat {self:?}")))
        }
    }
}

/// Splat attributes as tape variables: centers `[G,3]`, scales `[G,3]`,
/// rotations `[G,4]`, opacities `[G]`, colors `[G,3]`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianSet<'t, T: Real> {
    pub centers: Var<'t, T>,
    pub scales: Var<'t, T>,
    pub rotations: Var<'t, T>,
    pub opacities: Var<'t, T>,
    pub colors: Var<'t, T>,
}

impl<'t, T: Real> GaussianSet<'t, T> {
    pub fn len(&self) -> usize {
        self.opacities.numel()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Joins several sets into one, preserving order.
    pub fn concat(sets: &[GaussianSet<'t, T>]) -> Result<Self> {
        if sets.len() == 1 {
            return Ok(sets[0]);
        }
        let pick = |f: fn(&GaussianSet<'t, T>) -> Var<'t, T>| -> Result<Var<'t, T>> {
            concat(&sets.iter().map(f).collect::<Vec<_>>(), 0)
        };
        Ok(GaussianSet {
            centers: pick(|s| s.centers)?,
            scales: pick(|s| s.scales)?,
            rotations: pick(|s| s.rotations)?,
            opacities: pick(|s| s.opacities)?,
            colors: pick(|s| s.colors)?,
        })
    }

    pub fn to_gaussians(&self) -> Vec<Gaussian3D> {
        let (c, s, r, o, k) = (
            self.centers.value(),
            self.scales.value(),
            self.rotations.value(),
            self.opacities.value(),
            self.colors.value(),
        );
        let f = |t: &Tensor<T>, i: usize| t.data()[i].f64();
        (0..self.len())
            .map(|i| Gaussian3D {
                center: [f(&c, 3 * i), f(&c, 3 * i + 1), f(&c, 3 * i + 2)],
                scale: [f(&s, 3 * i), f(&s, 3 * i + 1), f(&s, 3 * i + 2)],
                rotation: [f(&r, 4 * i), f(&r, 4 * i + 1), f(&r, 4 * i + 2), f(&r, 4 * i + 3)],
                opacity: f(&o, i),
                rgb: [f(&k, 3 * i), f(&k, 3 * i + 1), f(&k, 3 * i + 2)],
            })
            .collect()
    }
}

impl<'t, T: Real> Var<'t, T> {
    /// Expected depth `[..]` from logits `[.., D]` over `samples`.
    pub fn ray_distance(self, samples: &DepthSamples) -> Result<Var<'t, T>> {
        let s = self.shape();
        if s.last() != Some(&samples.len()) {
            return Err(Error::contract(
                "ray_distance",
                format!("logits {s:?} do not end in {} depth samples", samples.len()),
            ));
        }
        let w = self.softmax(s.len() - 1)?;
        let d = self.tape().constant(samples.to_tensor());
        w.mul(d)?.sum_axis(s.len() - 1)
    }

    /// Row-wise quaternion normalisation of `[G,4]`; rows shorter than
    /// [`DEGENERATE_QUAT_NORM`] become `(1,0,0,0)` with zero gradient.
    /// Also returns how many rows fell back.
    pub fn normalize_quaternions(self) -> Result<(Var<'t, T>, usize)> {
        let xv = self.value();
        if xv.shape().last() != Some(&4) {
            return Err(Error::contract("normalize_quaternions", format!("expected [..,4], got {:?}", xv.shape())));
        }
        let mut out = Vec::with_capacity(xv.numel());
        let mut norms = Vec::with_capacity(xv.numel() / 4);
        let mut degenerate = 0;
        for q in xv.data().chunks_exact(4) {
            let n = q.iter().map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
            if n < DEGENERATE_QUAT_NORM {
                degenerate += 1;
                norms.push(None);
                out.extend([T::one(), T::zero(), T::zero(), T::zero()]);
            } else {
                norms.push(Some(T::of(n)));
                out.extend(q.iter().map(|&v| v / T::of(n)));
            }
        }
        let y = Tensor::new(xv.shape(), out)?;
        let yv = y.clone();
        let id = self.index();
        let var = self.tape().op("normalize_quaternions", &[self], y, move |g, sink| {
            if let Some(gx) = sink.slot(id) {
                for (r, n) in norms.iter().enumerate() {
                    let Some(n) = *n else { continue };
                    let yr = &yv.data()[4 * r..4 * r + 4];
                    let gr = &g[4 * r..4 * r + 4];
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for k in 0..4 {
                        gx[4 * r + k] = gx[4 * r + k] + (gr[k] - yr[k] * dot) / n;
                    }
                }
            }
        })?;
        Ok((var, degenerate))
    }
}

/// Per-view geometry needed to place pixel-aligned splats.
#[derive(Debug, Clone)]
pub struct PixelGeometry<T> {
    /// `[P,3]` ray origins and unit directions, row-major over views then pixels.
    pub origins: Tensor<T>,
    pub directions: Tensor<T>,
    /// `[P]` world size of one pixel at unit depth.
    pub pixel_size: Tensor<T>,
}

impl<T: Real> PixelGeometry<T> {
    pub fn new(cameras: &[Camera]) -> Result<Self> {
        let (mut o, mut d, mut p) = (Vec::new(), Vec::new(), Vec::new());
        for cam in cameras {
            let ps = cam.intrinsics.pixel_size_world();
            for ray in pixel_rays(cam) {
                o.extend(ray.origin.iter().map(|&v| T::of(v)));
                d.extend(ray.direction.iter().map(|&v| T::of(v)));
                p.push(T::of(ps));
            }
        }
        let n = p.len();
        if n == 0 {
            return Err(Error::contract("pixel_geometry", "no cameras"));
        }
        Ok(PixelGeometry {
            origins: Tensor::new(&[n, 3], o)?,
            directions: Tensor::new(&[n, 3], d)?,
            pixel_size: Tensor::new(&[n, 1], p)?,
        })
    }
}

/// Counters gathered while activating a map.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ActivationStats {
    pub degenerate_rotations: usize,
}

/// Activates a raw map `[N,H,W,12]` into splats placed along the pixel rays
/// of the matching cameras.
pub fn activate_map<'t, T: Real>(
    raw: Var<'t, T>,
    geometry: &PixelGeometry<T>,
    range: ScaleRange,
) -> Result<(GaussianSet<'t, T>, ActivationStats)> {
    let shape = raw.shape();
    if shape.last() != Some(&RAW_CHANNELS) {
        return Err(Error::contract("activate_map", format!("expected {RAW_CHANNELS} channels, got {shape:?}")));
    }
    let n = raw.numel() / RAW_CHANNELS;
    if n != geometry.pixel_size.numel() {
        return Err(Error::contract(
            "activate_map",
            format!("{n} raw records for {} pixel rays", geometry.pixel_size.numel()),
        ));
    }
    let tape = raw.tape();
    let flat = raw.reshape(&[n, RAW_CHANNELS])?;
    let colors = flat.narrow(1, RGB.start, 3)?.relu()?;
    let t = flat.narrow(1, DISTANCE, 1)?;
    let omega = flat.narrow(1, SCALE.start, 3)?.sigmoid()?;
    let s_pixel = omega.scale(T::of(range.max - range.min))?.add_scalar(T::of(range.min))?;
    let world_per_pixel = t.mul(tape.constant(geometry.pixel_size.clone()))?;
    let scales = s_pixel.mul(world_per_pixel)?;
    let (rotations, degenerate) = flat.narrow(1, ROTATION.start, 4)?.normalize_quaternions()?;
    let opacities = flat.narrow(1, OPACITY, 1)?.sigmoid()?.reshape(&[n])?;
    let centers = tape
        .constant(geometry.origins.clone())
        .add(t.mul(tape.constant(geometry.directions.clone()))?)?;
    Ok((
        GaussianSet { centers, scales, rotations, opacities, colors },
        ActivationStats { degenerate_rotations: degenerate },
    ))
}

/// Size in bytes of one exported splat record.
pub const SPLAT_RECORD_BYTES: usize = 14 * 4;

/// Writes splats as a little-endian u64 count followed by
/// `xyz, scale, quat(w,x,y,z), opacity, rgb` f32 records.
pub fn write_splats(mut w: impl Write, splats: &[Gaussian3D]) -> std::io::Result<()> {
    w.write_all(&(splats.len() as u64).to_le_bytes())?;
    for g in splats {
        let fields = g
            .center
            .iter()
            .chain(&g.scale)
            .chain(&g.rotation)
            .chain(std::iter::once(&g.opacity))
            .chain(&g.rgb);
        for &v in fields {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_splats(mut r: impl Read) -> Result<Vec<Gaussian3D>> {
    let bad = |m: &str| Error::Data(format!("splat file: {m}"));
    let mut count = [0u8; 8];
    r.read_exact(&mut count).map_err(|_| bad("missing count"))?;
    let count = u64::from_le_bytes(count) as usize;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| bad(&e.to_string()))?;
    if bytes.len() != count * SPLAT_RECORD_BYTES {
        return Err(bad(&format!("expected {count} records, found {} bytes", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(SPLAT_RECORD_BYTES)
        .map(|rec| {
            let v: Vec<f64> = rec
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            Gaussian3D {
                center: [v[0], v[1], v[2]],
                scale: [v[3], v[4], v[5]],
                rotation: [v[6], v[7], v[8], v[9]],
                opacity: v[10],
                rgb: [v[11], v[12], v[13]],
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::inverse_depth_samples;
    use crate::tensor::Tape;

    #[test]
    fn ray_distance_anchors() {
        let s = inverse_depth_samples(1.0, 100.0, 3).unwrap();
        let t = ray_distance_scalar(&[0.0; 3], &s).unwrap();
        assert!((t - s.mean()).abs() < 1e-12);
        assert!((t - 34.326_732_673).abs() < 1e-8);
        let peaked = ray_distance_scalar(&[0.0, 60.0, 0.0], &s).unwrap();
        assert!((peaked - s.values[1]).abs() < 1e-20f64.max(1e-12));
        assert!(ray_distance_scalar(&[0.0; 2], &s).is_err());
    }

    #[test]
    fn scale_anchors() {
        let r = ScaleRange::default();
        assert_eq!(r.pixel_scale(0.0), 7.75);
        let w = scale_activation([0.0; 3], r, 0.01, 2.0);
        assert!((w[0] - 0.155).abs() < 1e-15);
        assert!((r.pixel_scale(-800.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quaternion_and_center_cases() {
        assert_eq!(normalize_quaternion([2.0, 0.0, 0.0, 0.0]), ([1.0, 0.0, 0.0, 0.0], false));
        assert_eq!(normalize_quaternion([1.0; 4]).0, [0.5; 4]);
        assert_eq!(normalize_quaternion([0.0; 4]), ([1.0, 0.0, 0.0, 0.0], true));
        let ray = Ray { origin: Vec3::new(1.0, 2.0, 3.0), direction: Vec3::y() };
        assert_eq!(center_from_distance(&ray, 5.0), Vec3::new(1.0, 7.0, 3.0));
    }

    #[test]
    fn tape_activation_matches_scalar_path() {
        let cam = Camera::new(
            crate::camera::Intrinsics::new(4.0, 4.0, 0.5, 0.5, 2, 2).unwrap(),
            crate::camera::Pose::identity(),
        );
        let geo = PixelGeometry::<f64>::new(&[cam]).unwrap();
        let raw = Tensor::from_fn(&[1, 2, 2, RAW_CHANNELS], |i| {
            if i % RAW_CHANNELS == DISTANCE { 2.0 + i as f64 * 0.01 } else { (i as f64 * 0.7).sin() }
        });
        let tape = Tape::new();
        let (set, stats) = activate_map(tape.constant(raw.clone()), &geo, ScaleRange::default()).unwrap();
        assert_eq!(stats.degenerate_rotations, 0);
        let rays = pixel_rays(&cam);
        for (i, g) in set.to_gaussians().iter().enumerate() {
            let rec: [f64; RAW_CHANNELS] = raw.data()[i * RAW_CHANNELS..(i + 1) * RAW_CHANNELS].try_into().unwrap();
            let (expect, _) = Gaussian3D::from_raw(&rec, &rays[i], ScaleRange::default(), 0.25);
            for (a, b) in g.center.iter().zip(&expect.center) {
                assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in g.scale.iter().zip(&expect.scale) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((g.opacity - expect.opacity).abs() < 1e-12);
            assert_eq!(g.rgb, expect.rgb);
            g.validate().unwrap();
        }
    }

    #[test]
    fn splat_file_round_trip() {
        let g = Gaussian3D {
            center: [1.0, -2.0, 3.5],
            scale: [0.125, 0.25, 0.375],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity: 0.5,
            rgb: [0.25, 0.5, 1.0],
        };
        let mut buf = Vec::new();
        write_splats(&mut buf, &[g, g]).unwrap();
        assert_eq!(buf.len(), 8 + 2 * SPLAT_RECORD_BYTES);
        assert_eq!(read_splats(buf.as_slice()).unwrap(), vec![g, g]);
        assert!(read_splats(&buf[..buf.len() - 1]).is_err());
    }
}
