use super::Camera;

/// Probe depth for overlap estimates: the geometric mean of the depth range.
pub fn overlap_probe_depth(near: f64, far: f64) -> f64 {
    (near * far).sqrt()
}

/// Fraction of `cam_i` pixels whose point at depth `depth_mid` along the
/// optical axis projects inside `cam_j`'s frame.
pub fn view_overlap(cam_i: &Camera, cam_j: &Camera, depth_mid: f64) -> f64 {
    let k_inv = cam_i.intrinsics.inverse_matrix();
    let to_world = cam_i.pose.inverse();
    let (w, h) = (cam_j.width() as f64, cam_j.height() as f64);
    let mut inside = 0usize;
    for v in 0..cam_i.height() {
        for u in 0..cam_i.width() {
            let p_cam = k_inv * super::Vec3::new(u as f64, v as f64, 1.0) * depth_mid;
            let world = to_world.transform(&p_cam);
            if let Some((x, y, _)) = cam_j.project(&world) {
                if x >= -0.5 && x < w - 0.5 && y >= -0.5 && y < h - 0.5 {
                    inside += 1;
                }
            }
        }
    }
    inside as f64 / cam_i.intrinsics.pixel_count() as f64
}
