use super::{Camera, DepthSamples, Mat3, Vec3};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor, Var};

/// Coordinate written for pixels whose plane point lands behind the source
/// camera; far enough outside any map that the sampler masks it.
const BEHIND: f64 = -1.0e6;

/// Plane-induced homography taking reference pixels of `cam_i` to pixels of
/// `cam_j` for the fronto-parallel plane `z = depth` in `cam_i`'s frame.
pub fn homography(cam_i: &Camera, cam_j: &Camera, depth: f64) -> Mat3 {
    let rel = cam_j.pose.compose(&cam_i.pose.inverse());
    let n = Vec3::new(0.0, 0.0, 1.0);
    let plane = rel.rotation + rel.translation * n.transpose() / depth;
    cam_j.intrinsics.matrix() * plane * cam_i.intrinsics.inverse_matrix()
}

/// Source-view sampling coordinates `[h_i, w_i, d, 2]` for every reference
/// pixel and every depth plane.
pub fn sweep_coords<T: Real>(cam_i: &Camera, cam_j: &Camera, depths: &[f64]) -> Result<Tensor<T>> {
    if depths.is_empty() || depths.iter().any(|&z| !(z > 0.0 && z.is_finite())) {
        return Err(Error::contract("sweep_coords", format!("depths must be positive and finite, got {depths:?}")));
    }
    let (h, w, d) = (cam_i.height(), cam_i.width(), depths.len());
    let hs: Vec<Mat3> = depths.iter().map(|&z| homography(cam_i, cam_j, z)).collect();
    let mut out = Vec::with_capacity(h * w * d * 2);
    for v in 0..h {
        for u in 0..w {
            let p = Vec3::new(u as f64, v as f64, 1.0);
            for hm in &hs {
                let q = hm * p;
                if q.z > 0.0 {
                    out.push(T::of(q.x / q.z));
                    out.push(T::of(q.y / q.z));
                } else {
                    out.push(T::of(BEHIND));
                    out.push(T::of(BEHIND));
                }
            }
        }
    }
    Tensor::new(&[h, w, d, 2], out)
}

fn check_source<T: Real>(src: &Var<'_, T>, cam_j: &Camera) -> Result<()> {
    let s = src.shape();
    if s.len() != 3 || s[0] != cam_j.height() || s[1] != cam_j.width() {
        return Err(Error::contract(
            "plane_sweep",
            format!("source map {s:?} does not match a {}x{} camera", cam_j.height(), cam_j.width()),
        ));
    }
    Ok(())
}

/// Warps the source latent `[h,w,c]` of `cam_j` into `cam_i` through the
/// plane at `depth`. Returns the warped map and its validity mask.
pub fn homography_warp<'t, T: Real>(
    src: Var<'t, T>,
    cam_i: &Camera,
    cam_j: &Camera,
    depth: f64,
) -> Result<(Var<'t, T>, Tensor<T>)> {
    check_source(&src, cam_j)?;
    let coords = sweep_coords::<T>(cam_i, cam_j, &[depth])?.reshape(&[cam_i.height(), cam_i.width(), 2])?;
    src.bilinear_sample(src.tape().constant(coords))
}

/// All plane warps stacked depth-major: features `[h,w,d,c]`, mask `[h,w,d]`.
pub fn plane_sweep<'t, T: Real>(
    src: Var<'t, T>,
    cam_i: &Camera,
    cam_j: &Camera,
    samples: &DepthSamples,
) -> Result<(Var<'t, T>, Tensor<T>)> {
    check_source(&src, cam_j)?;
    let coords = sweep_coords::<T>(cam_i, cam_j, &samples.values)?;
    src.bilinear_sample(src.tape().constant(coords))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{inverse_depth_samples, Intrinsics, Pose};
    use crate::tensor::Tape;

    fn cam(pose: Pose) -> Camera {
        Camera::new(Intrinsics::new(8.0, 8.0, 3.5, 2.5, 8, 6).unwrap(), pose)
    }

    fn ramp(h: usize, w: usize, c: usize) -> Tensor<f64> {
        Tensor::from_fn(&[h, w, c], |i| (i as f64 * 0.37).sin())
    }

    #[test]
    fn identity_cameras_reproduce_source() {
        let c = cam(Pose::look_at(Vec3::new(0.2, 0.1, -1.0), Vec3::new(0.0, 0.0, 3.0), -Vec3::y()).unwrap());
        let tape = Tape::<f64>::new();
        let src = tape.constant(ramp(6, 8, 3));
        let (out, mask) = homography_warp(src, &c, &c, 2.7).unwrap();
        assert!(out.value().max_abs_diff(&src.value()) < 1e-12);
        assert!(mask.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn x_baseline_shifts_by_disparity() {
        // camera j one unit to the right of i: points move left by fx * b / z
        let ci = cam(Pose::identity());
        let cj = cam(Pose::new(Mat3::identity(), Vec3::new(-1.0, 0.0, 0.0)).unwrap());
        let hm = homography(&ci, &cj, 4.0);
        let q = hm * Vec3::new(5.0, 2.0, 1.0);
        assert!((q.x / q.z - (5.0 - 8.0 / 4.0)).abs() < 1e-12);
        assert!((q.y / q.z - 2.0).abs() < 1e-12);
    }

    #[test]
    fn sweep_slices_match_single_warps() {
        let ci = cam(Pose::identity());
        let cj = cam(Pose::look_at(Vec3::new(0.3, 0.0, 0.1), Vec3::new(0.0, 0.0, 4.0), -Vec3::y()).unwrap());
        let samples = inverse_depth_samples(1.0, 10.0, 4).unwrap();
        let tape = Tape::<f64>::new();
        let src = tape.constant(ramp(6, 8, 2));
        let (sweep, mask) = plane_sweep(src, &ci, &cj, &samples).unwrap();
        assert_eq!(sweep.shape(), vec![6, 8, 4, 2]);
        let sv = sweep.value();
        for (k, &z) in samples.values.iter().enumerate() {
            let (single, smask) = homography_warp(src, &ci, &cj, z).unwrap();
            let single = single.value();
            for p in 0..48 {
                assert_eq!(mask.data()[p * 4 + k], smask.data()[p]);
                for ch in 0..2 {
                    assert_eq!(sv.data()[(p * 4 + k) * 2 + ch], single.data()[p * 2 + ch]);
                }
            }
        }
    }

    #[test]
    fn plane_behind_source_is_masked() {
        let ci = cam(Pose::identity());
        // j looks back toward i from z = 10
        let cj = cam(Pose::look_at(Vec3::new(0.0, 0.0, 10.0), Vec3::zeros(), -Vec3::y()).unwrap());
        let tape = Tape::<f64>::new();
        let (_, mask) = homography_warp(tape.constant(ramp(6, 8, 1)), &ci, &cj, 20.0).unwrap();
        assert!(mask.data().iter().all(|&m| m == 0.0));
    }
}
