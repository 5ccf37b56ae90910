//! Overfits the desk model to one synthetic scene and reports held-out PSNR.
//! Usage: overfit [steps] [log_every] [config.toml]

use std::time::Instant;

use h3r_core::config::Config;
use h3r_core::eval::{render_targets, score_views};
use h3r_core::network::H3rModel;
use h3r_core::scene::{generate_scene, SyntheticSceneSpec};
use h3r_core::train::Trainer;

fn main() -> h3r_core::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let steps = args.first().copied().unwrap_or(200);
    let log_every = args.get(1).copied().unwrap_or(10);
    let spec = SyntheticSceneSpec { context_views: 2, target_views: 4, ..Default::default() };
    let scene = generate_scene(&spec)?;
    let train = scene.sample::<f32>(&[0, 5], &[1, 3, 4])?;
    let held = scene.sample::<f32>(&[0, 5], &[2])?;
    let cfg = match std::env::args().nth(3) {
        Some(p) => Config::load(p.as_ref())?,
        None => Config::default(),
    };
    let model = H3rModel::<f32>::new(cfg.model, cfg.train.seed)?;
    let mut trainer = Trainer::new(model, h3r_core::config::TrainConfig { steps, ..cfg.train })?;
    let score = |m: &H3rModel<f32>| -> h3r_core::Result<(f64, f64)> {
        score_views(&render_targets(m, &held, [0.0; 3])?, &held.target_images.cast())
    };
    println!("step 0 held-out psnr/ssim {:?}", score(&trainer.model)?);
    let t0 = Instant::now();
    let samples = vec![train];
    trainer.run(&samples, |t, m| {
        if m.step % log_every == 0 || m.step + 1 == steps {
            println!(
                "step {:5} loss {:.5} psnr {:.2} gn {:.3} lr {:.2e} aux {:?} {:.1}s",
                m.step, m.loss, m.psnr_train, m.grad_norm, m.lr, m.aux_loss, t0.elapsed().as_secs_f64()
            );
        }
        if (m.step + 1) % (log_every * 10) == 0 {
            println!("  held-out raw {:?} ema {:?}", score(&t.model)?, score(&t.ema_model()?)?);
        }
        Ok(())
    })?;
    println!("final raw {:?} ema {:?} in {:.1}s", score(&trainer.model)?, score(&trainer.ema_model()?)?, t0.elapsed().as_secs_f64());
    Ok(())
}
