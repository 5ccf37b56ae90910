use h3r_core::config::{ModelConfig, TrainConfig};
use h3r_core::network::H3rModel;
use h3r_core::scene::{generate_scene, SyntheticSceneSpec};
use h3r_core::tensor::Tensor;
use h3r_core::train::{MetricsLog, Trainer, TrainSample};

fn tiny_model() -> ModelConfig {
    ModelConfig {
        latent_channels: 8,
        hidden: 16,
        layers: 1,
        heads: 2,
        mlp_hidden: 32,
        depth_planes: 4,
        distance_bins: 8,
        decoder_channels: [8, 8],
        ..ModelConfig::default()
    }
}

fn sample(resolution: usize, targets: usize) -> TrainSample<f32> {
    let spec = SyntheticSceneSpec { seed: 11, resolution, target_views: targets, ..Default::default() };
    generate_scene(&spec).unwrap().default_sample().unwrap()
}

fn trainer(cfg: TrainConfig) -> Trainer<f32> {
    Trainer::new(H3rModel::new(tiny_model(), 3).unwrap(), cfg).unwrap()
}

fn values(t: &Trainer<f32>) -> Vec<(String, Tensor<f32>)> {
    t.model.params.iter().map(|(_, p)| (p.name.clone(), p.value.clone())).collect()
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let cfg = TrainConfig { peak_lr: 0.0, min_lr: 0.0, ..TrainConfig::default() };
    let mut t = trainer(cfg);
    let before = values(&t);
    let batch = [sample(16, 1)];
    t.step(&batch).unwrap();
    t.step(&batch).unwrap();
    assert_eq!(values(&t), before);
}

#[test]
fn clipped_norm_never_exceeds_the_limit() {
    let cfg = TrainConfig { grad_clip: 0.5, peak_lr: 1e-2, warmup_steps: 1, decay_until: 10, ..TrainConfig::default() };
    let mut t = trainer(cfg);
    let batch = [sample(16, 2)];
    for _ in 0..6 {
        t.step(&batch).unwrap();
        let after = t.model.params.grad_norm();
        assert!(after <= 0.5 * (1.0 + 1e-6), "post-clip norm {after}");
    }
    // A limit far below the raw norm always binds.
    let mut t = trainer(TrainConfig { grad_clip: 1e-4, ..TrainConfig::default() });
    let m = t.step(&batch).unwrap();
    assert!(m.grad_norm > 1e-4);
    assert!(t.model.params.grad_norm() <= 1e-4 * (1.0 + 1e-6));
}

#[test]
fn no_target_poses_means_no_aux_loss() {
    let cfg = TrainConfig { target_pose_prob: 0.0, ..TrainConfig::default() };
    let mut t = trainer(cfg);
    let batch = [sample(16, 2)];
    for _ in 0..5 {
        let m = t.step(&batch).unwrap();
        assert!(m.aux_loss.is_none() && !m.target_poses);
    }
    // The auxiliary head is never touched.
    for (_, p) in t.model.params.iter().filter(|(_, p)| p.name.starts_with("aux.")) {
        assert!(p.grad.is_none(), "{}", p.name);
    }

    let mut t = trainer(TrainConfig { target_pose_prob: 1.0, ..TrainConfig::default() });
    let m = t.step(&batch).unwrap();
    assert!(m.aux_loss.is_some() && m.target_poses);
}

#[test]
fn flip_probability_is_respected() {
    let batch = [sample(16, 1)];
    let mut t = trainer(TrainConfig { flip_prob: 0.0, ..TrainConfig::default() });
    assert!((0..4).all(|_| !t.step(&batch).unwrap().flipped));
    let mut t = trainer(TrainConfig { flip_prob: 1.0, ..TrainConfig::default() });
    assert!((0..4).all(|_| t.step(&batch).unwrap().flipped));
}

#[test]
fn same_seed_same_run() {
    let batch = [sample(16, 2)];
    let run = || {
        let mut t = trainer(TrainConfig::default());
        let m: Vec<_> = (0..3).map(|_| t.step(&batch).unwrap()).collect();
        (m, values(&t))
    };
    assert_eq!(run(), run());
}

#[test]
fn loss_decreases_over_200_steps() {
    let cfg = TrainConfig { steps: 200, warmup_steps: 20, decay_until: 200, peak_lr: 1e-3, min_lr: 3e-4, ..TrainConfig::default() };
    let mut t = trainer(cfg);
    let samples = [sample(32, 2)];
    let mut mse = Vec::new();
    let mut csv = Vec::new();
    {
        let mut log = MetricsLog::new(&mut csv);
        t.run(&samples, |_, m| {
            mse.push(m.mse);
            log.record(m)
        })
        .unwrap();
    }
    assert_eq!(mse.len(), 200);
    let first: f64 = mse[..20].iter().sum::<f64>() / 20.0;
    let last: f64 = mse[180..].iter().sum::<f64>() / 20.0;
    assert!(last < 0.7 * first, "mse {first} -> {last}");

    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "step,loss,mse,grad_mae,psnr_train,lr");
    assert_eq!(text.lines().count(), 201);
}

#[test]
fn gradient_accumulation_averages_scenes() {
    let a = sample(16, 1);
    let b = {
        let spec = SyntheticSceneSpec { seed: 12, resolution: 16, ..Default::default() };
        generate_scene(&spec).unwrap().default_sample().unwrap()
    };
    let cfg = TrainConfig { grad_accum: 2, flip_prob: 0.0, target_pose_prob: 0.0, ..TrainConfig::default() };
    let mut t = trainer(cfg.clone());
    let both = t.step(&[a.clone(), b.clone()]).unwrap();
    let mut ta = trainer(cfg.clone());
    let la = ta.step(&[a]).unwrap();
    let mut tb = trainer(cfg);
    let lb = tb.step(&[b]).unwrap();
    assert!((both.loss - 0.5 * (la.loss + lb.loss)).abs() < 1e-6 * both.loss);
}
