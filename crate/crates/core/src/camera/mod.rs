//! Pinhole cameras, rays, Plücker maps, depth hypotheses and plane-sweep warps.
//!
//! Conventions used everywhere in the crate:
//! - extrinsics are camera-from-world: `x_cam = R * x_world + t`;
//! - camera axes are x right, y down, z forward;
//! - pixel (u, v) = (column, row), and integer coordinates are pixel centres.

mod depth;
mod normalize;
mod overlap;
mod rays;
mod warp;

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use depth::{inverse_depth_samples, DepthSamples};
pub use normalize::normalize_poses;
pub use overlap::{overlap_probe_depth, view_overlap};
pub use rays::{pixel_rays, plucker, plucker_map, PluckerRay, Ray};
pub use warp::{homography, homography_warp, plane_sweep, sweep_coords};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

const ORTHO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    /// Centred principal point and a horizontal field of view in degrees.
    pub fn from_fov(fov_x_deg: f64, width: usize, height: usize) -> Result<Self> {
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self::new(f, f, (width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::contract("intrinsics", format!("invalid intrinsics {self:?}")))
        }
    }

    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn inverse_matrix(&self) -> Mat3 {
        Mat3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Intrinsics of the same camera sampled `factor` times more coarsely.
    /// Pixel centres stay aligned: edges map to edges.
    pub fn downsampled(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::contract(
                "intrinsics",
                format!("{}x{} is not divisible by {factor}", self.width, self.height),
            ));
        }
        let s = 1.0 / factor as f64;
        Self::new(
            self.fx * s,
            self.fy * s,
            (self.cx + 0.5) * s - 0.5,
            (self.cy + 0.5) * s - 0.5,
            self.width / factor,
            self.height / factor,
        )
    }

    /// Width of one pixel in world units at unit depth.
    pub fn pixel_size_world(&self) -> f64 {
        1.0 / self.fx
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Mirror image of the intrinsics under a horizontal image flip.
    pub fn flipped_horizontally(&self) -> Self {
        Intrinsics {
            cx: self.width as f64 - 1.0 - self.cx,
            ..*self
        }
    }
}

/// Camera-from-world rigid transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let p = Pose { rotation, translation };
        p.validate(ORTHO_TOL)?;
        Ok(p)
    }

    pub fn identity() -> Self {
        Pose {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Checks `R^T R = I` and `det R = 1` within `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let gram = self.rotation.transpose() * self.rotation - Mat3::identity();
        let worst = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let det = self.rotation.determinant();
        if worst > tol || (det - 1.0).abs() > tol || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::contract(
                "pose",
                format!("rotation is not orthonormal (gram error {worst:.3e}, det {det:.6})"),
            ));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `up` points roughly toward image top.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3) -> Result<Self> {
        let z = (target - eye).try_normalize(1e-12).ok_or_else(|| Error::contract("pose", "eye equals target"))?;
        // image y points down
        let x = (-up).cross(&z).try_normalize(1e-12).ok_or_else(|| Error::contract("pose", "up parallel to view"))?;
        let y = z.cross(&x);
        let r_wc = Mat3::from_columns(&[x, y, z]);
        let rotation = r_wc.transpose();
        Pose::new(rotation, -(rotation * eye))
    }

    /// Camera centre in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn transform(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_matrix(m: &Matrix4<f64>, tol: f64) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::contract("pose", format!("bottom row must be [0,0,0,1], got {bottom:?}")));
        }
        let p = Pose {
            rotation: m.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: m.fixed_view::<3, 1>(0, 3).into_owned(),
        };
        p.validate(tol)?;
        Ok(p)
    }

    /// The pose of the same camera in a world mirrored across its x axis
    /// (camera x flipped), matching a horizontally flipped image.
    pub fn flipped_horizontally(&self) -> Pose {
        let s = Mat3::from_diagonal(&Vec3::new(-1.0, 1.0, 1.0));
        Pose {
            rotation: s * self.rotation * s,
            translation: s * self.translation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl Camera {
    pub fn new(intrinsics: Intrinsics, pose: Pose) -> Self {
        Camera { intrinsics, pose }
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    /// Pixel coordinates and camera depth of a world point; `None` behind the camera.
    pub fn project(&self, world: &Vec3) -> Option<(f64, f64, f64)> {
        let p = self.pose.transform(world);
        if p.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy, p.z))
    }

    /// World ray through pixel (u, v).
    pub fn ray(&self, u: f64, v: f64) -> Ray {
        let d_cam = self.intrinsics.inverse_matrix() * Vec3::new(u, v, 1.0);
        let direction = (self.pose.rotation.transpose() * d_cam).normalize();
        Ray {
            origin: self.pose.center(),
            direction,
        }
    }

    /// Same camera on a coarser pixel grid.
    pub fn downsampled(&self, factor: usize) -> Result<Camera> {
        Ok(Camera {
            intrinsics: self.intrinsics.downsampled(factor)?,
            pose: self.pose,
        })
    }

    pub fn flipped_horizontally(&self) -> Camera {
        Camera {
            intrinsics: self.intrinsics.flipped_horizontally(),
            pose: self.pose.flipped_horizontally(),
        }
    }
}
