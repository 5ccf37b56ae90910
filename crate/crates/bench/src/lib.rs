//! Shared fixtures for the benchmarks.

use h3r_core::config::{ModelConfig, TrainConfig};
use h3r_core::network::H3rModel;
use h3r_core::scene::{generate_scene, SyntheticSceneSpec};
use h3r_core::train::{TrainSample, Trainer};

/// Desk-sized scene: two context views and one target at `resolution`.
pub fn desk_sample(resolution: usize) -> TrainSample<f32> {
    let spec = SyntheticSceneSpec { resolution, ..Default::default() };
    generate_scene(&spec).and_then(|s| s.default_sample()).expect("desk scene")
}

pub fn desk_model() -> H3rModel<f32> {
    H3rModel::new(ModelConfig::default(), 0).expect("desk model")
}

pub fn desk_trainer() -> Trainer<f32> {
    Trainer::new(desk_model(), TrainConfig::default()).expect("desk trainer")
}
