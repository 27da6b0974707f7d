//! Benchmark fixtures shared by the criterion targets.

use idxmvs_core::data::{generate_planar_scene, Plane, SceneSpec};
use idxmvs_core::{ModelConfig, SceneSample, Variant};

pub fn scene(size: usize, views: usize) -> SceneSample {
    generate_planar_scene(&SceneSpec {
        width: size,
        height: size,
        focal: size as f64,
        planes: vec![Plane::fronto_parallel(1.5)],
        texture_period: size as f64 / 2.0,
        baseline: 0.1,
        views,
        seed: 1,
        ..SceneSpec::default()
    })
    .expect("valid scene")
}

pub fn model_config(variant: Variant) -> ModelConfig {
    ModelConfig { variant, ..ModelConfig::default() }
}
