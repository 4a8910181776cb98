#![allow(dead_code)]

use maskdistill::dataio::SceneDataset;
use maskdistill::fields::Backend;
use maskdistill::synthetic::{build_dataset, generate_scene, SceneParams, SupervisionParams};
use maskdistill::trainer::TrainConfig;

/// Two objects, eight 20x20 views (six train, two held out).
pub fn small_dataset(seed: u64) -> SceneDataset {
    let params = SceneParams {
        num_objects: 2,
        num_cameras: 8,
        width: 20,
        height: 20,
        focal_px: 25.0,
        ..SceneParams::default()
    };
    let sup = SupervisionParams {
        seed,
        ..SupervisionParams::default()
    };
    build_dataset(&generate_scene(seed, &params).unwrap(), &sup).unwrap()
}

pub fn small_config(backend: Backend, d_s: usize) -> TrainConfig {
    TrainConfig {
        backend,
        d_m: 4,
        d_s,
        n_k: 8,
        grid_resolution: 12,
        n_samples: 16,
        ray_batch: 256,
        splat_count: 200,
        splat_radius: 0.05,
        num_freqs: 3,
        token_hidden: 16,
        seed: 3,
        ..TrainConfig::default()
    }
}
