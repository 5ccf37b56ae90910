//! `h3r`: generate synthetic scenes, train, render, evaluate and inspect.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use h3r_core::config::Config;
use h3r_core::eval::{evaluate, Bucket};
use h3r_core::gaussian::write_splats;
use h3r_core::network::H3rModel;
use h3r_core::raster::render;
use h3r_core::scene::{
    generate_scene, load_checkpoint, restore_params, save_checkpoint, scene_dirs, write_ppm, Role, SceneBundle,
    SyntheticSceneSpec,
};
use h3r_core::train::{MetricsLog, Trainer};
use h3r_core::volume::CostStrategy;
use h3r_core::Error;

type Result<T> = h3r_core::Result<T>;

#[derive(Parser)]
#[command(name = "h3r", version, about = "Feed-forward Gaussian splatting from posed images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic scenes with ground-truth images and depth.
    GenerateData(GenerateArgs),
    /// Train a model on scene directories.
    Train(TrainArgs),
    /// Render one view of a scene from its context views.
    Render(RenderArgs),
    /// Score a checkpoint on scene directories.
    Evaluate(EvaluateArgs),
    /// List the tensors stored in a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config; unspecified keys keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `model.cost_strategy`.
    #[arg(long, value_parser = parse_strategy)]
    cost_strategy: Option<CostStrategy>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenes: Option<usize>,
    /// Context views per scene.
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    target_views: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from a checkpoint's parameters.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Index of the view to render.
    #[arg(long)]
    view: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also export the predicted splats.
    #[arg(long)]
    splats: Option<PathBuf>,
    /// Use raw weights instead of the EMA average.
    #[arg(long)]
    no_ema: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum BucketArg {
    None,
    Overlap,
    Views,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    scenes: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    bucket: BucketArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_ema: bool,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    #[arg(long)]
    ckpt: PathBuf,
}

fn parse_strategy(s: &str) -> std::result::Result<CostStrategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Config file next to a checkpoint, written by `train`.
fn sidecar(ckpt: &Path) -> PathBuf {
    ckpt.parent().unwrap_or(Path::new(".")).join("config.toml")
}

fn resolve(args: &ConfigArgs, ckpt: Option<&Path>) -> Result<Config> {
    let path = args.config.clone().or_else(|| ckpt.map(sidecar).filter(|p| p.is_file()));
    let mut cfg = match path {
        Some(p) => Config::load(&p)?,
        None => Config::default(),
    };
    if let Some(s) = args.cost_strategy {
        cfg.model.cost_strategy = s;
    }
    Ok(cfg)
}

fn print_config(cfg: &Config) {
    println!("# resolved config\n{}", cfg.to_toml());
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.into(), source: e })?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut cfg = resolve(&a.cfg, None)?;
    let d = &mut cfg.data;
    d.seed = a.seed.unwrap_or(d.seed);
    d.scenes = a.scenes.unwrap_or(d.scenes);
    d.context_views = a.views.unwrap_or(d.context_views);
    d.target_views = a.target_views.unwrap_or(d.target_views);
    d.resolution = a.resolution.unwrap_or(d.resolution);
    cfg.validate()?;
    print_config(&cfg);
    for i in 0..cfg.data.scenes {
        let spec = SyntheticSceneSpec::from_data_config(&cfg.data, i);
        let dir = a.out.join(format!("scene_{i:04}"));
        generate_scene(&spec)?.save(&dir)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn load_scenes(root: &Path) -> Result<Vec<(String, SceneBundle)>> {
    scene_dirs(root)?
        .into_iter()
        .map(|d| Ok((d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(), SceneBundle::load(&d)?)))
        .collect()
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = resolve(&a.cfg, None)?;
    cfg.train.steps = a.steps.unwrap_or(cfg.train.steps);
    cfg.train.seed = a.seed.unwrap_or(cfg.train.seed);
    if a.steps.is_some() && cfg.train.decay_until <= cfg.train.warmup_steps {
        cfg.train.decay_until = cfg.train.steps.max(cfg.train.warmup_steps + 1);
    }
    cfg.validate()?;
    print_config(&cfg);
    let scenes = load_scenes(&a.scenes)?;
    let samples = scenes.iter().map(|(_, s)| s.default_sample::<f32>()).collect::<Result<Vec<_>>>()?;
    let mut model = H3rModel::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
    if let Some(init) = &a.init {
        restore_params(&mut model.params, &load_checkpoint(init)?, false)?;
    }
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    let cfg_path = a.out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::Io { path: cfg_path, source: e })?;
    let mut log = MetricsLog::new(create(&a.out.join("metrics.csv"))?);
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    let (every, log_every) = (cfg.train.checkpoint_every.max(1), cfg.train.log_every.max(1));
    trainer.run(&samples, |t, m| {
        log.record(m)?;
        if m.step % log_every == 0 {
            println!("step {:6} loss {:.5} psnr {:.2} lr {:.3e}", m.step, m.loss, m.psnr_train, m.lr);
        }
        if (m.step + 1) % every == 0 {
            save_checkpoint(&a.out.join(format!("ckpt_{:06}.h3rt", m.step + 1)), &t.model.params, Some(&t.ema))?;
        }
        Ok(())
    })?;
    let last = a.out.join("final.h3rt");
    save_checkpoint(&last, &trainer.model.params, Some(&trainer.ema))?;
    println!("wrote {}", last.display());
    Ok(())
}

fn load_model(cfg: &Config, ckpt: &Path, use_ema: bool) -> Result<H3rModel<f32>> {
    let mut model = H3rModel::<f32>::new(cfg.model.clone(), cfg.train.seed)?;
    restore_params(&mut model.params, &load_checkpoint(ckpt)?, use_ema)?;
    Ok(model)
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let cfg = resolve(&a.cfg, Some(&a.ckpt))?;
    print_config(&cfg);
    let model = load_model(&cfg, &a.ckpt, !a.no_ema)?;
    let scene = SceneBundle::load(&a.scene)?;
    let view = scene
        .views
        .get(a.view)
        .ok_or_else(|| Error::Data(format!("scene has {} views, no view {}", scene.views.len(), a.view)))?;
    let mut sample = scene.sample::<f32>(&scene.indices(Role::Context), &[a.view])?;
    sample.input.targets.clear();
    let tape = h3r_core::tensor::Tape::new();
    let splats = model.forward(&tape, &sample.input)?.gaussians.to_gaussians();
    let img = render(&splats, &view.camera, cfg.train.background).color;
    write_ppm(create(&a.out)?, &img).map_err(|e| Error::Io { path: a.out.clone(), source: e })?;
    println!("wrote {}", a.out.display());
    if let Some(p) = &a.splats {
        write_splats(create(p)?, &splats).map_err(|e| Error::Io { path: p.clone(), source: e })?;
        println!("wrote {} splats to {}", splats.len(), p.display());
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let cfg = resolve(&a.cfg, Some(&a.ckpt))?;
    print_config(&cfg);
    let model = load_model(&cfg, &a.ckpt, !a.no_ema)?;
    let scenes = load_scenes(&a.scenes)?
        .into_iter()
        .map(|(n, s)| Ok((n, s.default_sample::<f32>()?)))
        .collect::<Result<Vec<_>>>()?;
    let bucket = match a.bucket {
        BucketArg::None => Bucket::None,
        BucketArg::Overlap => Bucket::Overlap,
        BucketArg::Views => Bucket::Views,
    };
    let report = evaluate(&model, &scenes, bucket, cfg.train.background)?;
    report.write_csv(create(&a.out)?)?;
    let (p, s) = report.mean();
    println!("{} scenes: psnr {p:.3} dB, ssim {s:.4}", report.scenes.len());
    for (k, (n, p, s)) in report.by_bucket() {
        println!("  {k}: {n} scenes, psnr {p:.3}, ssim {s:.4}");
    }
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<()> {
    let cfg = resolve(&a.cfg, Some(&a.ckpt))?;
    print_config(&cfg);
    let data = load_checkpoint(&a.ckpt)?;
    for (name, t) in &data.params {
        println!("{name}\t{:?}\t{:?}", t.dtype(), t.shape());
    }
    if let Some(e) = &data.ema {
        println!("ema: decay {}, {} updates, {} tensors", e.decay, e.updates, e.shadow.len());
    }
    let model = H3rModel::<f32>::new(cfg.model.clone(), 0)?;
    let expected: std::collections::BTreeSet<&str> = model.params.names().collect();
    let stored: std::collections::BTreeSet<&str> = data.params.iter().map(|(n, _)| n.as_str()).collect();
    let missing: Vec<_> = expected.difference(&stored).collect();
    let unexpected: Vec<_> = stored.difference(&expected).collect();
    if missing.is_empty() && unexpected.is_empty() {
        println!("{} tensors match the model config", stored.len());
        Ok(())
    } else {
        Err(Error::Checkpoint(format!("does not match the model config; missing {missing:?}, unexpected {unexpected:?}")))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::NonFinite { .. } => 4,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateData(a) => generate(a),
        Command::Train(a) => train(a),
        Command::Render(a) => render_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Inspect(a) => inspect(a),
    };
    let _ = std::io::stdout().flush();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
