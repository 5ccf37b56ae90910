use std::path::Path;

use h3r_core::camera::{Camera, Intrinsics, Pose, Vec3};
use h3r_core::scene::{
    generate_scene, load_checkpoint, render_surfaces, restore_params, save_checkpoint, Plane, Role, SceneBundle,
    Surface, SyntheticSceneSpec, Texture, EMA_PREFIX, MANIFEST,
};
use h3r_core::tensor::{ParamStore, Tensor};
use h3r_core::train::EmaState;
use h3r_core::Error;

fn spec(seed: u64) -> SyntheticSceneSpec {
    SyntheticSceneSpec { seed, resolution: 24, target_views: 2, ..Default::default() }
}

fn plane(z: f64, texture: Texture) -> Surface {
    Surface::Plane(Plane { point: Vec3::new(0.0, 0.0, z), u: Vec3::x(), v: Vec3::y(), texture })
}

fn checker() -> Texture {
    Texture { base: [0.0; 3], alt: [1.0; 3], freq: [0.0, 0.0], phase: 0.0, checker: 1.0, checker_weight: 1.0 }
}

fn camera_at(eye: Vec3, target: Vec3, size: usize) -> Camera {
    let k = Intrinsics::from_fov(60.0, size, size).unwrap();
    Camera::new(k, Pose::look_at(eye, target, -Vec3::y()).unwrap())
}

fn luminance(img: &Tensor<f64>, x: usize, y: usize) -> f64 {
    let w = img.shape()[1];
    img.data()[(y * w + x) * 3..(y * w + x) * 3 + 3].iter().sum::<f64>() / 3.0
}

#[test]
fn same_seed_is_bit_identical() {
    let a = generate_scene(&spec(7)).unwrap();
    let b = generate_scene(&spec(7)).unwrap();
    assert_eq!(a, b);
    let c = generate_scene(&spec(8)).unwrap();
    assert_ne!(a.views[0].image, c.views[0].image);
    assert_eq!(a.indices(Role::Context), [0, 3]);
}

#[test]
fn fronto_parallel_plane_has_constant_depth() {
    let cam = Camera::new(Intrinsics::from_fov(60.0, 20, 16).unwrap(), Pose::identity());
    let tex = Texture { freq: [0.7, 0.2], checker_weight: 0.3, ..checker() };
    let (_, depth) = render_surfaces(&[plane(3.25, tex)], &cam, 2);
    assert_eq!(depth.shape(), [16, 20]);
    for &z in depth.data() {
        assert!((z - 3.25).abs() < 1e-12, "{z}");
    }
}

#[test]
fn x_baseline_disparity_matches_stereo_geometry() {
    let (size, z, b) = (64, 5.0, 0.5);
    let tex = Texture { base: [0.1, 0.3, 0.2], alt: [0.9, 0.7, 0.8], freq: [0.9, 0.35], phase: 0.4, checker: 0.35, checker_weight: 0.4 };
    let k = Intrinsics::from_fov(60.0, size, size).unwrap();
    let left = Camera::new(k, Pose::identity());
    let right = Camera::new(k, Pose::new(nalgebra::Matrix3::identity(), Vec3::new(-b, 0.0, 0.0)).unwrap());
    let surfaces = [plane(z, tex)];
    let (l, _) = render_surfaces(&surfaces, &left, 4);
    let (r, _) = render_surfaces(&surfaces, &right, 4);
    // Right image is the left one shifted by d pixels towards -x.
    let cost = |d: usize| -> f64 {
        let mut s = 0.0;
        for y in 16..48 {
            for x in 20..56 {
                let (a, c) = (luminance(&l, x, y), luminance(&r, x - d, y));
                s += (a - c) * (a - c);
            }
        }
        s
    };
    let costs: Vec<f64> = (0..=14).map(cost).collect();
    let best = (1..14).min_by(|&a, &b| costs[a].total_cmp(&costs[b])).unwrap();
    let (cm, c0, cp) = (costs[best - 1], costs[best], costs[best + 1]);
    let measured = best as f64 + 0.5 * (cm - cp) / (cm - 2.0 * c0 + cp);
    let expected = k.fx * b / z;
    assert!((measured - expected).abs() < 0.5, "measured {measured}, expected {expected}");
}

#[test]
fn projected_texture_edge_matches_rendered_edge() {
    let z = 6.0;
    let surfaces = [plane(z, checker())];
    // Vertical checker edge x = 0, halfway up a square.
    let p = Vec3::new(0.0, 0.5, z);
    let q = Vec3::new(0.0, 0.6, z);
    for eye in [Vec3::new(0.3, -0.2, 0.0), Vec3::new(-0.8, 0.1, 0.5), Vec3::new(0.5, 0.3, 1.0)] {
        let cam = camera_at(eye, Vec3::new(0.1, 0.2, z), 48);
        let (img, _) = render_surfaces(&surfaces, &cam, 8);
        let (u0, v0, _) = cam.project(&p).unwrap();
        let (u1, v1, _) = cam.project(&q).unwrap();
        let row = v0.round();
        let expected = u0 + (u1 - u0) * (row - v0) / (v1 - v0);
        let y = row as usize;
        let lo = (expected as usize).saturating_sub(4);
        let vals: Vec<f64> = (lo..lo + 9).map(|x| luminance(&img, x, y)).collect();
        let mid = (vals.iter().cloned().fold(f64::INFINITY, f64::min) + vals.iter().cloned().fold(0.0, f64::max)) / 2.0;
        let i = (0..8).find(|&i| (vals[i] - mid) * (vals[i + 1] - mid) <= 0.0).expect("edge in window");
        let found = (lo + i) as f64 + (mid - vals[i]) / (vals[i + 1] - vals[i]);
        assert!((found - expected).abs() < 0.5, "eye {eye:?}: found {found}, expected {expected}");
    }
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scene = generate_scene(&spec(3)).unwrap();
    scene.save(dir.path()).unwrap();
    let back = SceneBundle::load(dir.path()).unwrap();
    assert_eq!((back.near, back.far, back.views.len()), (scene.near, scene.far, scene.views.len()));
    for (a, b) in back.views.iter().zip(&scene.views) {
        assert_eq!((&a.name, a.camera, &a.image, a.role), (&b.name, b.camera, &b.image, b.role));
        // Depth is stored at single precision.
        let (da, db) = (a.depth.as_ref().unwrap(), b.depth.as_ref().unwrap());
        assert!(da.data().iter().zip(db.data()).all(|(x, y)| *x == *y as f32 as f64));
    }
}

fn saved_scene() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    generate_scene(&spec(4)).unwrap().save(dir.path()).unwrap();
    dir
}

fn edit_manifest(dir: &Path, f: impl FnOnce(&mut serde_json::Value)) {
    let path = dir.join(MANIFEST);
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    f(&mut v);
    std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
}

#[test]
fn missing_image_names_the_view() {
    let dir = saved_scene();
    std::fs::remove_file(dir.path().join("view_002.ppm")).unwrap();
    let err = SceneBundle::load(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
    assert!(err.to_string().contains("view_002"), "{err}");
}

#[test]
fn non_orthonormal_rotation_is_rejected() {
    let dir = saved_scene();
    edit_manifest(dir.path(), |v| {
        let m = &mut v["views"][1]["camera_from_world"][0];
        *m = serde_json::json!(m.as_f64().unwrap() + 1e-3);
    });
    let err = SceneBundle::load(dir.path()).unwrap_err();
    assert!(err.to_string().contains("view 1"), "{err}");

    // A perturbation inside the tolerance still loads.
    let dir = saved_scene();
    edit_manifest(dir.path(), |v| {
        let m = &mut v["views"][1]["camera_from_world"][0];
        *m = serde_json::json!(m.as_f64().unwrap() + 1e-6);
    });
    SceneBundle::load(dir.path()).unwrap();
}

#[test]
fn schema_violations_name_the_field() {
    let dir = saved_scene();
    edit_manifest(dir.path(), |v| v["views"][0]["intrinsics"] = serde_json::json!([1.0, 2.0]));
    let err = SceneBundle::load(dir.path()).unwrap_err().to_string();
    assert!(err.contains("intrinsics") || err.contains("9"), "{err}");

    let dir = saved_scene();
    edit_manifest(dir.path(), |v| v["views"][0]["colour"] = serde_json::json!(1));
    let err = SceneBundle::load(dir.path()).unwrap_err().to_string();
    assert!(err.contains("colour"), "{err}");
}

fn store() -> ParamStore<f32> {
    let mut s = ParamStore::new();
    s.insert("a.weight", Tensor::from_fn(&[3, 4], |i| (i as f32 * 0.37).sin())).unwrap();
    s.insert("b.bias", Tensor::new(&[2], vec![f32::MIN_POSITIVE, -1.5e30]).unwrap()).unwrap();
    s
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.h3rt");
    let params = store();
    save_checkpoint(&path, &params, None).unwrap();
    let data = load_checkpoint(&path).unwrap();
    assert!(data.ema.is_none());
    let mut fresh = ParamStore::new();
    fresh.insert("a.weight", Tensor::<f32>::zeros(&[3, 4])).unwrap();
    fresh.insert("b.bias", Tensor::<f32>::zeros(&[2])).unwrap();
    assert!(!restore_params(&mut fresh, &data, true).unwrap());
    for (name, p) in params.iter().map(|(_, p)| (&p.name, &p.value)) {
        let got = fresh.by_name(name).unwrap().value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(got, p.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn truncated_or_corrupt_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.h3rt");
    save_checkpoint(&path, &store(), None).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    for cut in [3, 6, 12, bytes.len() - 1] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))), "cut at {cut}");
    }
    let mut bad = bytes.clone();
    bad[4] = 9;
    std::fs::write(&path, &bad).unwrap();
    assert!(load_checkpoint(&path).unwrap_err().to_string().contains("version"));
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
}

#[test]
fn ema_lives_under_its_prefix_and_restores_alone() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.h3rt");
    let params = store();
    let mut ema = EmaState::new(&params, 0.999).unwrap();
    ema.update(&params).unwrap();
    ema.update(&params).unwrap();
    save_checkpoint(&path, &params, Some(&ema)).unwrap();

    let records = h3r_core::tensor::container::read_container(std::fs::File::open(&path).unwrap()).unwrap();
    let shadow: Vec<&str> = records.iter().filter_map(|(n, _)| n.strip_prefix(EMA_PREFIX)).collect();
    assert!(shadow.contains(&"a.weight") && shadow.contains(&"b.bias"));

    let data = load_checkpoint(&path).unwrap();
    let e = data.ema.as_ref().unwrap();
    assert_eq!((e.decay, e.updates), (0.999, 2));
    let state = e.to_state::<f32>();
    assert_eq!(state.shadow, ema.shadow);

    // The shadow alone restores, without the raw parameters.
    let mut fresh = store();
    fresh.iter_mut().for_each(|p| p.value.data_mut().iter_mut().for_each(|v| *v = 0.0));
    let averaged = state.averaged().unwrap();
    fresh.load_values(&averaged).unwrap();
    let a = fresh.by_name("a.weight").unwrap().value.data();
    let b = params.by_name("a.weight").unwrap().value.data();
    assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-6 * y.abs().max(1.0)));
}

#[test]
fn mismatched_architecture_lists_names() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.h3rt");
    save_checkpoint(&path, &store(), None).unwrap();
    let mut other = ParamStore::<f32>::new();
    other.insert("a.weight", Tensor::zeros(&[3, 4])).unwrap();
    other.insert("c.gamma", Tensor::zeros(&[2])).unwrap();
    let err = restore_params(&mut other, &load_checkpoint(&path).unwrap(), false).unwrap_err().to_string();
    assert!(err.contains("c.gamma") && err.contains("b.bias"), "{err}");
}
