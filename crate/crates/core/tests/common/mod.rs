#![allow(dead_code)]

use splatsr::data::{make_synthetic_scene, patch_sphere_scene, split_every_kth, SyntheticKind};
use splatsr::pipeline::PipelineConfig;
use splatsr::scene::{Camera, Gaussian};
use splatsr::{DenoiserSpec, GaussianScene, ViewSet};

pub const PATCHES: usize = 300;
pub const VIEWS: usize = 24;
pub const HR_SIZE: usize = 32;
pub const TEST_EVERY: usize = 8;

/// The reference synthetic scene: a patch sphere seen from a 24-view orbit,
/// 32x32 HR, x2 LR, every 8th view held out.
pub fn reference_views() -> ViewSet {
    let vs = make_synthetic_scene(SyntheticKind::PatchSphere { patches: PATCHES }, VIEWS, HR_SIZE, 2, 0).unwrap();
    split_every_kth(&vs, TEST_EVERY).unwrap()
}

pub fn reference_scene() -> GaussianScene {
    patch_sphere_scene(PATCHES, 0).unwrap()
}

/// A tiny dataset for plumbing tests.
pub fn tiny_views() -> ViewSet {
    let vs = make_synthetic_scene(SyntheticKind::PatchSphere { patches: 40 }, 8, 16, 2, 1).unwrap();
    split_every_kth(&vs, 4).unwrap()
}

pub fn tiny_config(seed: u64) -> PipelineConfig {
    PipelineConfig {
        steps: 2,
        fit_iterations_per_step: 5,
        pretrain_iterations: 10,
        n_gaussians: 30,
        seed,
        denoiser: DenoiserSpec::oracle(0.2, 0),
        ..PipelineConfig::default()
    }
}

/// Up to five Gaussians in front of an 8x8 camera.
pub fn small_scene_and_camera() -> (GaussianScene, Camera) {
    let cam = Camera::look_at(
        nalgebra::Vector3::new(0.3, -2.5, 0.8),
        nalgebra::Vector3::zeros(),
        nalgebra::Vector3::z(),
        [9.0, 9.5, 4.0, 4.0],
        8,
        8,
    )
    .unwrap();
    let mut gs = vec![
        Gaussian::new([0.0, 0.0, 0.0], [0.25, 0.15, 0.2], 0.7, [0.8, 0.3, 0.2]),
        Gaussian::new([0.3, 0.2, 0.1], [0.1, 0.3, 0.15], 0.5, [0.1, 0.7, 0.4]),
        Gaussian::new([-0.25, -0.3, 0.2], [0.2, 0.2, 0.1], 0.6, [0.3, 0.3, 0.9]),
        Gaussian::new([0.1, 0.6, -0.3], [0.3, 0.12, 0.2], 0.4, [0.9, 0.8, 0.1]),
        Gaussian::new([-0.4, 0.4, -0.1], [0.15, 0.25, 0.3], 0.55, [0.5, 0.2, 0.6]),
    ];
    let rots = [
        [0.9, 0.1, -0.3, 0.2],
        [0.7, -0.2, 0.4, 0.1],
        [1.0, 0.0, 0.0, 0.0],
        [0.6, 0.5, 0.2, -0.3],
        [0.8, -0.1, -0.1, 0.5],
    ];
    for (g, r) in gs.iter_mut().zip(rots) {
        g.rotation = r;
    }
    (GaussianScene::new(gs, [0.1, 0.15, 0.2]).unwrap(), cam)
}
