use criterion::{criterion_group, criterion_main, Criterion};

use h3r_bench::{desk_model, desk_sample, desk_trainer};
use h3r_core::raster::render;
use h3r_core::tensor::Tape;

fn forward(c: &mut Criterion) {
    let model = desk_model();
    let sample = desk_sample(64);
    c.bench_function("forward_desk_64", |b| {
        b.iter(|| {
            let tape = Tape::new();
            model.forward(&tape, &sample.input).unwrap().gaussians.to_gaussians().len()
        })
    });
}

fn rasterize(c: &mut Criterion) {
    let model = desk_model();
    let sample = desk_sample(64);
    let tape = Tape::new();
    let splats = model.forward(&tape, &sample.input).unwrap().gaussians.to_gaussians();
    let camera = sample.target_cameras[0];
    c.bench_function("render_8192_splats_64", |b| b.iter(|| render(&splats, &camera, [0.0; 3])));
}

fn train_step(c: &mut Criterion) {
    let mut trainer = desk_trainer();
    let batch = [desk_sample(64)];
    let mut g = c.benchmark_group("train");
    g.sample_size(10);
    g.bench_function("train_step_desk_64", |b| b.iter(|| trainer.step(&batch).unwrap()));
    g.finish();
}

criterion_group!(benches, forward, rasterize, train_step);
criterion_main!(benches);
