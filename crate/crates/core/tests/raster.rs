use h3r_core::camera::{Camera, Intrinsics, Pose};
use h3r_core::gaussian::{Gaussian3D, GaussianSet};
use h3r_core::raster::{project, render, render_naive, render_set, LOW_PASS};
use h3r_core::tensor::gradcheck::{check_gradients, project as random_projection, GradCheckConfig};
use h3r_core::tensor::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn camera(size: usize, f: f64) -> Camera {
    let c = (size as f64 - 1.0) / 2.0;
    Camera::new(Intrinsics::new(f, f, c, c, size, size).unwrap(), Pose::identity())
}

fn splat(center: [f64; 3], scale: f64, opacity: f64, rgb: [f64; 3]) -> Gaussian3D {
    Gaussian3D { center, scale: [scale; 3], rotation: [1.0, 0.0, 0.0, 0.0], opacity, rgb }
}

fn random_scene(n: usize, seed: u64) -> Vec<Gaussian3D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            Gaussian3D {
                center: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(2.0..6.0)],
                scale: std::array::from_fn(|_| rng.random_range(0.02..0.3)),
                rotation: q.map(|v| v / qn),
                opacity: rng.random_range(0.05..1.0),
                rgb: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
            }
        })
        .collect()
}

#[test]
fn on_axis_projection_follows_inverse_depth() {
    let cam = camera(33, 40.0);
    let s = 0.1;
    let near = project(&[splat([0.0, 0.0, 2.0], s, 0.5, [1.0; 3])], &cam);
    let far = project(&[splat([0.0, 0.0, 4.0], s, 0.5, [1.0; 3])], &cam);
    let expect = |z: f64| (40.0 * s / z).powi(2) + LOW_PASS;
    assert!((near[0].cov2d[0] - expect(2.0)).abs() < 1e-12);
    assert!((near[0].cov2d[2] - expect(2.0)).abs() < 1e-12);
    assert!(near[0].cov2d[1].abs() < 1e-12);
    assert_eq!(near[0].mean2d, [16.0, 16.0]);
    let extent = |c: f64| (c - LOW_PASS).sqrt();
    assert!((extent(near[0].cov2d[0]) - 2.0 * extent(far[0].cov2d[0])).abs() < 1e-12);
    assert!(project(&[splat([0.0, 0.0, -1.0], s, 0.5, [1.0; 3])], &cam).is_empty());
}

#[test]
fn empty_and_single_splat_cases() {
    let cam = camera(16, 20.0);
    let bg = [0.2, 0.4, 0.6];
    let out = render(&[], &cam, bg);
    assert!(out.alpha.data().iter().all(|&a| a == 0.0));
    assert!(out.color.data().chunks(3).all(|p| p == bg));

    // pixel (7, 7) sits on the optical axis once cx = 7
    let cam = Camera::new(Intrinsics::new(20.0, 20.0, 7.0, 7.0, 16, 16).unwrap(), Pose::identity());
    let rgb = [0.9, 0.3, 0.1];
    let out = render(&[splat([0.0, 0.0, 3.0], 0.2, 1.0 - 1e-12, rgb)], &cam, bg);
    let p = &out.color.data()[(7 * 16 + 7) * 3..(7 * 16 + 7) * 3 + 3];
    for k in 0..3 {
        assert!((p[k] - (0.99 * rgb[k] + 0.01 * bg[k])).abs() < 1e-12);
    }
}

#[test]
fn two_splats_composite_front_to_back() {
    let cam = Camera::new(Intrinsics::new(20.0, 20.0, 7.0, 7.0, 16, 16).unwrap(), Pose::identity());
    let bg = [0.1, 0.2, 0.3];
    let red = splat([0.0, 0.0, 2.0], 0.1, 0.6, [1.0, 0.0, 0.0]);
    let blue = splat([0.0, 0.0, 5.0], 0.2, 1.0, [0.0, 0.0, 1.0]);
    for scene in [[red, blue], [blue, red]] {
        let out = render(&scene, &cam, bg);
        let p = &out.color.data()[(7 * 16 + 7) * 3..(7 * 16 + 7) * 3 + 3];
        let expect = [0.6 + 0.004 * bg[0], 0.004 * bg[1], 0.4 * 0.99 + 0.004 * bg[2]];
        for k in 0..3 {
            assert!((p[k] - expect[k]).abs() < 1e-12, "{p:?} vs {expect:?}");
        }
    }
}

#[test]
fn permutation_and_tiling_are_exact() {
    let cam = camera(40, 30.0);
    let mut scene = random_scene(60, 3);
    let reference = render(&scene, &cam, [0.5; 3]);
    assert_eq!(reference, render_naive(&scene, &cam, [0.5; 3]));
    scene.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    assert_eq!(reference, render(&scene, &cam, [0.5; 3]));
    assert!(reference.alpha.data().iter().all(|&a| (0.0..=1.0).contains(&a)));
    assert!(reference.color.data().iter().all(|&c| (0.0..=1.0).contains(&c)));
}

#[test]
fn render_gradients_match_finite_differences() {
    // three broad splats whose 3-sigma ellipses cover the whole 8x8 frame,
    // so no cutoff boundary sits near a pixel
    let cam = camera(8, 6.0);
    let inputs = [
        Tensor::from_f64(&[3, 3], &[0.1, -0.05, 2.0, -0.2, 0.1, 3.0, 0.05, 0.2, 4.0]).unwrap(),
        Tensor::from_f64(&[3, 3], &[1.1, 0.8, 0.5, 1.5, 1.2, 0.9, 2.0, 1.7, 1.3]).unwrap(),
        Tensor::from_f64(&[3, 4], &[0.9, 0.3, -0.2, 0.1, 0.7, -0.1, 0.5, 0.4, 0.95, 0.1, 0.1, -0.2]).unwrap(),
        Tensor::from_f64(&[3], &[0.5, 0.7, 0.8]).unwrap(),
        Tensor::from_f64(&[3, 3], &[0.9, 0.2, 0.1, 0.1, 0.8, 0.3, 0.2, 0.3, 0.9]).unwrap(),
    ];
    let report = check_gradients(&inputs, GradCheckConfig::default(), |_, v| {
        let set = GaussianSet { centers: v[0], scales: v[1], rotations: v[2], opacities: v[3], colors: v[4] };
        let (img, _) = render_set(&set, &cam, [0.2, 0.3, 0.4])?;
        random_projection(img, 5)
    })
    .unwrap();
    assert!(report.passed(), "{:?}", report.worst);
}

#[test]
fn single_splat_color_gradient_closed_form() {
    let cam = camera(8, 6.0);
    let tape = Tape::<f64>::new();
    let g = splat([0.0, 0.0, 3.0], 0.6, 0.7, [0.3, 0.5, 0.2]);
    let leaf = |d: &[f64], s: &[usize]| tape.leaf(Tensor::from_f64(s, d).unwrap());
    let set = GaussianSet {
        centers: leaf(&g.center, &[1, 3]),
        scales: leaf(&g.scale, &[1, 3]),
        rotations: leaf(&g.rotation, &[1, 4]),
        opacities: leaf(&[g.opacity], &[1]),
        colors: leaf(&g.rgb, &[1, 3]),
    };
    let target = Tensor::<f64>::from_fn(&[8, 8, 3], |i| (i as f64 * 0.1).cos().abs());
    let (img, out) = render_set(&set, &cam, [0.0; 3]).unwrap();
    let loss = img.sub(tape.constant(target.clone())).unwrap().square().unwrap().sum().unwrap();
    let grads = tape.backward(loss).unwrap();
    let d_rgb = grads.wrt(set.colors);
    for k in 0..3 {
        let mut expect = 0.0;
        for p in 0..64 {
            let c = out.color.data()[p * 3 + k];
            expect += 2.0 * out.alpha.data()[p] * (c - target.data()[p * 3 + k]);
        }
        assert!((d_rgb.data()[k] - expect).abs() < 1e-10);
    }
}

#[test]
fn occluded_splat_gradient_is_attenuated() {
    let cam = Camera::new(Intrinsics::new(20.0, 20.0, 7.0, 7.0, 16, 16).unwrap(), Pose::identity());
    let front = splat([0.0, 0.0, 2.0], 1.0, 1.0, [1.0, 0.0, 0.0]);
    let back = splat([0.0, 0.0, 5.0], 1.0, 0.8, [0.0, 0.0, 1.0]);
    let tape = Tape::<f64>::new();
    let stack = |f: fn(&Gaussian3D) -> Vec<f64>, w: usize| {
        let d: Vec<f64> = [front, back].iter().flat_map(f).collect();
        let shape = if w == 1 { vec![2] } else { vec![2, w] };
        tape.leaf(Tensor::from_f64(&shape, &d).unwrap())
    };
    let set = GaussianSet {
        centers: stack(|g| g.center.to_vec(), 3),
        scales: stack(|g| g.scale.to_vec(), 3),
        rotations: stack(|g| g.rotation.to_vec(), 4),
        opacities: stack(|g| vec![g.opacity], 1),
        colors: stack(|g| g.rgb.to_vec(), 3),
    };
    let (img, _) = render_set(&set, &cam, [0.0; 3]).unwrap();
    let px = img.narrow(0, 7, 1).unwrap().narrow(1, 7, 1).unwrap().sum().unwrap();
    let grads = tape.backward(px).unwrap();
    let d = grads.wrt(set.colors);
    // front weight 0.99, back weight 0.01 * 0.8
    assert!((d.data()[0] - 0.99).abs() < 1e-12);
    assert!((d.data()[3] - 0.01 * 0.8).abs() < 1e-12);
}
