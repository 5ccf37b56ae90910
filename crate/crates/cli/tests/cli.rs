use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[model]
latent_channels = 8
hidden = 16
layers = 1
heads = 2
mlp_hidden = 32
distance_bins = 8
decoder_channels = [8, 8]
[train]
steps = 4
warmup_steps = 1
decay_until = 4
checkpoint_every = 2
log_every = 1
[data]
scenes = 2
resolution = 16
target_views = 1
"#;

fn h3r(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_h3r")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "{text}\n{}", String::from_utf8_lossy(&out.stderr));
    text
}

fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    ok(&h3r(&["generate-data", "--config", "tiny.toml", "--out", "data"], dir.path()));
    dir
}

#[test]
fn generate_is_deterministic() {
    let dir = prepared();
    ok(&h3r(&["generate-data", "--config", "tiny.toml", "--out", "again"], dir.path()));
    for f in ["cameras.json", "view_000.ppm", "view_002.ppm", "depth_001.pfm"] {
        let a = std::fs::read(dir.path().join("data/scene_0001").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("again/scene_0001").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn train_render_evaluate_inspect() {
    let dir = prepared();
    let p = dir.path();
    let log = ok(&h3r(&["train", "--config", "tiny.toml", "--scenes", "data", "--out", "run"], p));
    assert!(log.contains("[model]"), "resolved config is printed");
    for f in ["config.toml", "metrics.csv", "ckpt_000002.h3rt", "ckpt_000004.h3rt", "final.h3rt"] {
        assert!(p.join("run").join(f).is_file(), "{f}");
    }
    let metrics = std::fs::read_to_string(p.join("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 5);
    assert!(metrics.starts_with("step,loss"));

    ok(&h3r(
        &["render", "--ckpt", "run/final.h3rt", "--scene", "data/scene_0000", "--view", "1", "--out", "v.ppm", "--splats", "s.txt"],
        p,
    ));
    let img = std::fs::read(p.join("v.ppm")).unwrap();
    assert!(img.starts_with(b"P6\n16 16\n255\n"));
    assert_eq!(img.len(), "P6\n16 16\n255\n".len() + 16 * 16 * 3);
    assert!(p.join("s.txt").is_file());

    let summary = ok(&h3r(&["evaluate", "--ckpt", "run/final.h3rt", "--scenes", "data", "--out", "r.csv"], p));
    assert!(summary.contains("2 scenes"));
    let report = std::fs::read_to_string(p.join("r.csv")).unwrap();
    assert_eq!(report.lines().count(), 4);

    let listing = ok(&h3r(&["inspect", "--ckpt", "run/final.h3rt"], p));
    assert!(listing.contains("match the model config"));
    assert!(listing.contains("ema: decay 0.999, 4 updates"));
}

#[test]
fn exit_codes() {
    let dir = prepared();
    let p = dir.path();
    std::fs::write(p.join("bad.toml"), "[model]\nlayerz = 2\n").unwrap();
    let out = h3r(&["train", "--config", "bad.toml", "--scenes", "data", "--out", "run"], p);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("layerz"));

    let out = h3r(&["render", "--ckpt", "none.h3rt", "--scene", "data/scene_0000", "--view", "0", "--out", "x.ppm"], p);
    assert_eq!(out.status.code(), Some(3));

    std::fs::write(p.join("junk.h3rt"), b"H3RT\x01\x00").unwrap();
    let out = h3r(&["inspect", "--ckpt", "junk.h3rt", "--config", "tiny.toml"], p);
    assert_eq!(out.status.code(), Some(3));

    std::fs::remove_file(p.join("data/scene_0001/view_001.ppm")).unwrap();
    let out = h3r(&["evaluate", "--ckpt", "none.h3rt", "--config", "tiny.toml", "--scenes", "data", "--out", "r.csv"], p);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn inspect_flags_a_mismatched_config() {
    let dir = prepared();
    let p = dir.path();
    ok(&h3r(&["train", "--config", "tiny.toml", "--scenes", "data", "--out", "run", "--steps", "1"], p));
    std::fs::write(p.join("wide.toml"), TINY.replace("layers = 1", "layers = 2")).unwrap();
    let out = h3r(&["inspect", "--ckpt", "run/final.h3rt", "--config", "wide.toml"], p);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("transformer.1"));
}
