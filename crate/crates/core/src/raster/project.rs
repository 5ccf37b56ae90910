//! EWA projection of 3D Gaussians to screen-space splats and its adjoint.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use crate::camera::Camera;
use crate::gaussian::Gaussian3D;

/// Added to the projected covariance diagonal, in px².
pub const LOW_PASS: f64 = 0.3;
/// Splats whose camera depth is not beyond this are culled.
pub const NEAR_CULL: f64 = 0.01;
/// Splats contribute within this many standard deviations.
pub const SIGMA_CUTOFF: f64 = 3.0;

/// A Gaussian projected into one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    /// Position in the input list.
    pub index: usize,
    pub mean2d: [f64; 2],
    /// Symmetric covariance `(xx, xy, yy)` in px², low-pass floor included.
    pub cov2d: [f64; 3],
    /// Inverse covariance `(xx, xy, yy)`.
    pub conic: [f64; 3],
    pub depth: f64,
    /// Radius of a disc holding the cutoff ellipse, in px.
    pub radius: f64,
    pub opacity: f64,
    pub rgb: [f64; 3],
}

/// Intermediates of one projection kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Projection {
    pub splat: Splat2D,
    p_cam: Vector3<f64>,
    rot: Matrix3<f64>,
    scale: Vector3<f64>,
    quat: [f64; 4],
    m: Matrix3<f64>,
    sigma_cam: Matrix3<f64>,
    jac: Matrix2x3<f64>,
}

pub(crate) fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Adjoint of [`quat_to_matrix`] (the quaternion is used as given).
fn quat_to_matrix_grad(q: [f64; 4], g: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let g = |r: usize, c: usize| g[(r, c)];
    let dw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    [dw, dx, dy, dz]
}

pub(crate) fn project_one(g: &Gaussian3D, index: usize, camera: &Camera) -> Option<Projection> {
    let k = &camera.intrinsics;
    let w = &camera.pose.rotation;
    let p_cam = camera.pose.transform(&Vector3::from(g.center));
    if p_cam.z <= NEAR_CULL {
        return None;
    }
    let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
    let jac = Matrix2x3::new(k.fx / z, 0.0, -k.fx * x / (z * z), 0.0, k.fy / z, -k.fy * y / (z * z));
    let rot = quat_to_matrix(g.rotation);
    let scale = Vector3::from(g.scale);
    let m = rot * Matrix3::from_diagonal(&scale);
    let sigma_cam = w * (m * m.transpose()) * w.transpose();
    let cov = jac * sigma_cam * jac.transpose() + Matrix2::identity() * LOW_PASS;
    let (a, b, c) = (cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let splat = Splat2D {
        index,
        mean2d: [k.fx * x / z + k.cx, k.fy * y / z + k.cy],
        cov2d: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: z,
        radius: SIGMA_CUTOFF * lambda_max.sqrt(),
        opacity: g.opacity,
        rgb: g.rgb,
    };
    Some(Projection { splat, p_cam, rot, scale, quat: g.rotation, m, sigma_cam, jac })
}

/// Screen-space gradients of one splat.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct SplatGrad {
    pub mean2d: [f64; 2],
    /// With respect to conic entries `(xx, xy, yy)`, `xy` counted once.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub rgb: [f64; 3],
}

impl SplatGrad {
    pub fn add(&mut self, o: &SplatGrad) {
        for i in 0..2 {
            self.mean2d[i] += o.mean2d[i];
        }
        for i in 0..3 {
            self.conic[i] += o.conic[i];
            self.rgb[i] += o.rgb[i];
        }
        self.opacity += o.opacity;
    }
}

/// Gradients of one Gaussian's world-space fields.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct GaussianGrad {
    pub center: [f64; 3],
    pub scale: [f64; 3],
    pub rotation: [f64; 4],
    pub opacity: f64,
    pub rgb: [f64; 3],
}

pub(crate) fn project_backward(p: &Projection, g: &SplatGrad, camera: &Camera) -> GaussianGrad {
    let k = &camera.intrinsics;
    let w = &camera.pose.rotation;
    let [a, b, c] = p.splat.conic;
    let conic = Matrix2::new(a, b, b, c);
    let g_conic = Matrix2::new(g.conic[0], 0.5 * g.conic[1], 0.5 * g.conic[1], g.conic[2]);
    let d_cov = -(conic * g_conic * conic);
    let jac = &p.jac;
    let d_sigma_cam = jac.transpose() * d_cov * jac;
    let d_jac = d_cov * jac * p.sigma_cam.transpose() + d_cov.transpose() * jac * p.sigma_cam;
    let d_sigma = w.transpose() * d_sigma_cam * w;
    let d_m = (d_sigma + d_sigma.transpose()) * p.m;
    let mut d_scale = [0.0; 3];
    let mut d_rot = Matrix3::zeros();
    for j in 0..3 {
        for i in 0..3 {
            d_scale[j] += d_m[(i, j)] * p.rot[(i, j)];
            d_rot[(i, j)] = d_m[(i, j)] * p.scale[j];
        }
    }
    let (x, y, z) = (p.p_cam.x, p.p_cam.y, p.p_cam.z);
    let (z2, z3) = (z * z, z * z * z);
    let mut d_p = Vector3::new(
        g.mean2d[0] * k.fx / z,
        g.mean2d[1] * k.fy / z,
        -g.mean2d[0] * k.fx * x / z2 - g.mean2d[1] * k.fy * y / z2,
    );
    d_p.x += -d_jac[(0, 2)] * k.fx / z2;
    d_p.y += -d_jac[(1, 2)] * k.fy / z2;
    d_p.z += -d_jac[(0, 0)] * k.fx / z2 - d_jac[(1, 1)] * k.fy / z2
        + d_jac[(0, 2)] * 2.0 * k.fx * x / z3
        + d_jac[(1, 2)] * 2.0 * k.fy * y / z3;
    let d_center = w.transpose() * d_p;
    GaussianGrad {
        center: [d_center.x, d_center.y, d_center.z],
        scale: d_scale,
        rotation: quat_to_matrix_grad(p.quat, &d_rot),
        opacity: g.opacity,
        rgb: g.rgb,
    }
}

/// Projects every Gaussian into `camera`; culled ones are dropped.
pub fn project(gaussians: &[Gaussian3D], camera: &Camera) -> Vec<Splat2D> {
    gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| project_one(g, i, camera).map(|p| p.splat))
        .collect()
}
