use super::{Mat3, Pose, Vec3};
use crate::error::{Error, Result};

/// Chordal mean of rotations: the orthogonal projection of their average.
fn mean_rotation(rotations: impl Iterator<Item = Mat3>) -> Result<Mat3> {
    let mut sum = Mat3::zeros();
    for r in rotations {
        sum += r;
    }
    let svd = sum.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::contract("normalize_poses", "rotation mean is degenerate")),
    };
    let mut fix = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        fix[(2, 2)] = -1.0;
    }
    Ok(u * fix * v_t)
}

/// Re-expresses poses in the frame of their mean pose.
///
/// Returns the new poses and the world-to-canonical transform `T`, so that
/// `new = old ∘ T⁻¹` and world points map as `x' = T x`.
pub fn normalize_poses(poses: &[Pose]) -> Result<(Vec<Pose>, Pose)> {
    if poses.is_empty() {
        return Err(Error::contract("normalize_poses", "need at least one pose"));
    }
    let n = poses.len() as f64;
    let center: Vec3 = poses.iter().map(|p| p.center()).sum::<Vec3>() / n;
    let r_cw = mean_rotation(poses.iter().map(|p| p.rotation.transpose()))?;
    let world_from_canonical = Pose {
        rotation: r_cw,
        translation: center,
    };
    let out = poses.iter().map(|p| p.compose(&world_from_canonical)).collect();
    Ok((out, world_from_canonical.inverse()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relative(a: &Pose, b: &Pose) -> Pose {
        b.compose(&a.inverse())
    }

    #[test]
    fn single_pose_becomes_identity() {
        let p = Pose::look_at(Vec3::new(1.0, 2.0, 3.0), Vec3::zeros(), -Vec3::y()).unwrap();
        let (out, _) = normalize_poses(&[p]).unwrap();
        assert!((out[0].rotation - Mat3::identity()).norm() < 1e-12);
        assert!(out[0].translation.norm() < 1e-12);
    }

    #[test]
    fn canonical_set_is_a_fixed_point() {
        let a = Pose::new(Mat3::identity(), Vec3::new(0.5, 0.0, 0.0)).unwrap();
        let b = Pose::new(Mat3::identity(), Vec3::new(-0.5, 0.0, 0.0)).unwrap();
        let (out, _) = normalize_poses(&[a, b]).unwrap();
        assert!((out[0].translation - a.translation).norm() < 1e-12);
        assert!((out[1].translation - b.translation).norm() < 1e-12);
    }

    #[test]
    fn relative_poses_are_preserved() {
        let a = Pose::look_at(Vec3::new(1.0, -0.3, 0.2), Vec3::new(0.0, 0.0, 4.0), -Vec3::y()).unwrap();
        let b = Pose::look_at(Vec3::new(-0.7, 0.4, -0.5), Vec3::new(0.3, 0.1, 5.0), -Vec3::y()).unwrap();
        let (out, t) = normalize_poses(&[a, b]).unwrap();
        let (before, after) = (relative(&a, &b), relative(&out[0], &out[1]));
        assert!((before.rotation - after.rotation).norm() < 1e-9);
        assert!((before.translation - after.translation).norm() < 1e-9);
        // centres move with the world transform
        assert!((out[0].center() - t.transform(&a.center())).norm() < 1e-9);
    }
}
