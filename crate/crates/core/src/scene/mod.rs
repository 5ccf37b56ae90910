//! Scene bundles on disk, the synthetic scene generator and checkpoints.

mod checkpoint;
mod ppm;
mod synthetic;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, restore_params, save_checkpoint, CheckpointData, EmaRecords, EMA_PREFIX};
pub use ppm::{quantize, read_pfm, read_ppm, to_byte, write_pfm, write_ppm};
pub use synthetic::{generate_scene, render_surfaces, Box3, Plane, Surface, SyntheticSceneSpec, Texture};

use crate::camera::{Camera, Intrinsics, Mat3, Pose};
use crate::error::{Error, Result};
use crate::network::SceneInput;
use crate::tensor::{Real, Tensor};
use crate::train::TrainSample;

pub const MANIFEST: &str = "cameras.json";
/// Rotation orthonormality tolerance when loading manifests.
pub const GRAM_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Context,
    Target,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneView {
    pub name: String,
    pub camera: Camera,
    /// `[H,W,3]` in `[0,1]`.
    pub image: Tensor<f64>,
    /// `[H,W]` camera-space depth, when known.
    pub depth: Option<Tensor<f64>>,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub views: Vec<SceneView>,
    pub near: f64,
    pub far: f64,
}

impl SceneBundle {
    pub fn indices(&self, role: Role) -> Vec<usize> {
        (0..self.views.len()).filter(|&i| self.views[i].role == role).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.indices(Role::Context).len() < 2 {
            return Err(Error::Data("scene needs at least 2 context views".into()));
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(Error::Data(format!("scene needs 0 < near < far, got {} and {}", self.near, self.far)));
        }
        let first = self.views[0].image.shape().to_vec();
        for v in &self.views {
            if v.image.shape() != first.as_slice() {
                return Err(Error::Data(format!("view {}: image {:?} differs from {:?}", v.name, v.image.shape(), first)));
            }
            if v.camera.height() != first[0] || v.camera.width() != first[1] {
                return Err(Error::Data(format!("view {}: camera size does not match its image", v.name)));
            }
        }
        Ok(())
    }

    /// Training sample from chosen context and target views.
    pub fn sample<T: Real>(&self, context: &[usize], targets: &[usize]) -> Result<TrainSample<T>> {
        let pick = |idx: &[usize]| -> Result<(Tensor<T>, Vec<Camera>)> {
            let mut data = Vec::new();
            let mut cams = Vec::new();
            for &i in idx {
                let v = self.views.get(i).ok_or_else(|| Error::Data(format!("scene has no view {i}")))?;
                data.extend(v.image.data().iter().map(|&x| T::of(x)));
                cams.push(v.camera);
            }
            let s = self.views[idx[0]].image.shape();
            Ok((Tensor::new(&[idx.len(), s[0], s[1], 3], data)?, cams))
        };
        if context.len() < 2 || targets.is_empty() {
            return Err(Error::Data("need at least 2 context views and 1 target view".into()));
        }
        let (images, cameras) = pick(context)?;
        let (target_images, target_cameras) = pick(targets)?;
        Ok(TrainSample {
            input: SceneInput { images, cameras, targets: Vec::new(), near: self.near, far: self.far },
            target_cameras,
            target_images,
        })
    }

    /// Sample using the stored context/target roles.
    pub fn default_sample<T: Real>(&self) -> Result<TrainSample<T>> {
        self.sample(&self.indices(Role::Context), &self.indices(Role::Target))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Manifest { near: self.near, far: self.far, views: Vec::new() };
        for (i, v) in self.views.iter().enumerate() {
            let image = format!("view_{i:03}.ppm");
            let path = dir.join(&image);
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            write_ppm(BufWriter::new(f), &v.image).map_err(|e| Error::io(&path, e))?;
            let depth = match &v.depth {
                Some(d) => {
                    let name = format!("depth_{i:03}.pfm");
                    let path = dir.join(&name);
                    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
                    write_pfm(BufWriter::new(f), d).map_err(|e| Error::io(&path, e))?;
                    Some(name)
                }
                None => None,
            };
            let k = v.camera.intrinsics.matrix();
            let m = v.camera.pose.to_matrix();
            manifest.views.push(ManifestView {
                name: v.name.clone(),
                image,
                depth,
                role: v.role,
                width: v.camera.width(),
                height: v.camera.height(),
                intrinsics: (0..9).map(|i| k[(i / 3, i % 3)]).collect(),
                camera_from_world: (0..16).map(|i| m[(i / 4, i % 4)]).collect(),
            });
        }
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let mut views = Vec::with_capacity(manifest.views.len());
        for (i, mv) in manifest.views.iter().enumerate() {
            let ctx = |m: String| Error::Data(format!("{}: view {i} ({}): {m}", path.display(), mv.name));
            let camera = mv.camera().map_err(|e| ctx(e.to_string()))?;
            let img_path = dir.join(&mv.image);
            let f = File::open(&img_path).map_err(|e| ctx(format!("image {}: {e}", img_path.display())))?;
            let image = read_ppm(BufReader::new(f)).map_err(|e| ctx(e.to_string()))?;
            if image.shape() != [mv.height, mv.width, 3] {
                return Err(ctx(format!("image is {:?}, manifest says {}x{}", image.shape(), mv.width, mv.height)));
            }
            let depth = match &mv.depth {
                Some(name) => {
                    let p = dir.join(name);
                    let f = File::open(&p).map_err(|e| ctx(format!("depth {}: {e}", p.display())))?;
                    Some(read_pfm(BufReader::new(f)).map_err(|e| ctx(e.to_string()))?)
                }
                None => None,
            };
            views.push(SceneView { name: mv.name.clone(), camera, image, depth, role: mv.role });
        }
        let bundle = SceneBundle { views, near: manifest.near, far: manifest.far };
        bundle.validate().map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
        Ok(bundle)
    }
}

/// Scene directories below `root` (or `root` itself when it holds a manifest),
/// sorted by path.
pub fn scene_dirs(root: &Path) -> Result<Vec<std::path::PathBuf>> {
    if root.join(MANIFEST).is_file() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut out: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(MANIFEST).is_file())
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no scene directories with {MANIFEST}", root.display())));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    near: f64,
    far: f64,
    views: Vec<ManifestView>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestView {
    name: String,
    image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    depth: Option<String>,
    role: Role,
    width: usize,
    height: usize,
    /// 3x3 row-major, pixels.
    intrinsics: Vec<f64>,
    /// 4x4 row-major.
    camera_from_world: Vec<f64>,
}

impl ManifestView {
    fn camera(&self) -> Result<Camera> {
        if self.intrinsics.len() != 9 {
            return Err(Error::Data(format!("intrinsics has {} entries, expected 9", self.intrinsics.len())));
        }
        if self.camera_from_world.len() != 16 {
            return Err(Error::Data(format!("camera_from_world has {} entries, expected 16", self.camera_from_world.len())));
        }
        let k = Mat3::from_row_slice(&self.intrinsics);
        if k[(0, 1)] != 0.0 || k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::Data("intrinsics must be [[fx,0,cx],[0,fy,cy],[0,0,1]]".into()));
        }
        let intr = Intrinsics::new(k[(0, 0)], k[(1, 1)], k[(0, 2)], k[(1, 2)], self.width, self.height)
            .map_err(|e| Error::Data(format!("intrinsics: {e}")))?;
        let pose = Pose::from_matrix(&Matrix4::from_row_slice(&self.camera_from_world), GRAM_TOLERANCE)
            .map_err(|e| Error::Data(format!("camera_from_world: {e}")))?;
        Ok(Camera::new(intr, pose))
    }
}
