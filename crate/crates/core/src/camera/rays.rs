use super::{Camera, Vec3};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    pub fn plucker(&self) -> PluckerRay {
        PluckerRay {
            moment: self.origin.cross(&self.direction),
            direction: self.direction,
        }
    }
}

/// Line in Plücker form: moment `o × d` and unit direction `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PluckerRay {
    pub moment: Vec3,
    pub direction: Vec3,
}

impl PluckerRay {
    pub fn to_array(&self) -> [f64; 6] {
        let (m, d) = (self.moment, self.direction);
        [m.x, m.y, m.z, d.x, d.y, d.z]
    }
}

/// World rays through every pixel centre, row-major `[h * w]`.
pub fn pixel_rays(camera: &Camera) -> Vec<Ray> {
    let k_inv = camera.intrinsics.inverse_matrix();
    let r_t = camera.pose.rotation.transpose();
    let origin = camera.pose.center();
    let (w, h) = (camera.width(), camera.height());
    let mut rays = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let d = r_t * (k_inv * Vec3::new(u as f64, v as f64, 1.0));
            rays.push(Ray {
                origin,
                direction: d.normalize(),
            });
        }
    }
    rays
}

/// Six-channel `[moment, direction]` map `[h, w, 6]` of a row-major ray field.
pub fn plucker<T: Real>(rays: &[Ray], h: usize, w: usize) -> Tensor<T> {
    assert_eq!(rays.len(), h * w, "ray field does not match {h}x{w}");
    let mut data = Vec::with_capacity(rays.len() * 6);
    for r in rays {
        data.extend(r.plucker().to_array().iter().map(|&x| T::of(x)));
    }
    Tensor::new(&[h, w, 6], data).expect("shape matches")
}

/// Plücker map of a camera's pixel grid.
pub fn plucker_map<T: Real>(camera: &Camera) -> Tensor<T> {
    plucker(&pixel_rays(camera), camera.height(), camera.width())
}
