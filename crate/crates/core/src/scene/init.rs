//! Scene initialization from posed LR images.

use nalgebra::Vector3;
use rand::Rng as _;

use super::{logit, Camera, Gaussian, GaussianScene};
use crate::data::{SceneMeta, ViewSet};
use crate::error::{Error, Result};
use crate::rng::{self, stream, Rng};

const ATTEMPTS: usize = 64;

/// Camera-space depth range over which the ray through `(u, v)` stays inside
/// the scene bounds.
fn ray_box_depths(cam: &Camera, u: f64, v: f64, meta: &SceneMeta) -> Option<(f64, f64)> {
    let o = cam.center();
    let d = cam.unproject(u, v, 1.0) - o;
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    for k in 0..3 {
        let (a, b) = (meta.bounds_min[k], meta.bounds_max[k]);
        if d[k].abs() < 1e-12 {
            if o[k] < a || o[k] > b {
                return None;
            }
            continue;
        }
        let (t0, t1) = ((a - o[k]) / d[k], (b - o[k]) / d[k]);
        lo = lo.max(t0.min(t1));
        hi = hi.min(t0.max(t1));
    }
    (hi > lo).then_some((lo, hi))
}

struct Placement {
    position: Vector3<f64>,
    scale: f64,
    color: [f64; 3],
}

fn place(views: &ViewSet, train: &[usize], r: &mut Rng) -> Placement {
    let cams: Vec<Camera> = train.iter().map(|&i| views.lr_camera(i)).collect();
    let mut best: Option<(usize, Placement)> = None;
    for _ in 0..ATTEMPTS {
        let k = r.random_range(0..train.len());
        let cam = &cams[k];
        let lr = &views.views[train[k]].lr;
        let (px, py) = (r.random_range(0..cam.width), r.random_range(0..cam.height));
        let (u, v) = (px as f64 + 0.5, py as f64 + 0.5);
        let Some((lo, hi)) = ray_box_depths(cam, u, v, &views.meta) else {
            continue;
        };
        let z = r.random_range(lo..=hi);
        let position = cam.unproject(u, v, z);
        let seen = cams.iter().filter(|c| c.sees(&position)).count();
        let cand = Placement {
            position,
            scale: 1.5 * z / cam.fx,
            color: [lr.get(px, py, 0), lr.get(px, py, 1), lr.get(px, py, 2)],
        };
        if seen == cams.len() {
            return cand;
        }
        if best.as_ref().is_none_or(|(s, _)| seen > *s) {
            best = Some((seen, cand));
        }
    }
    best.map(|b| b.1).unwrap_or_else(|| {
        // no ray hit the bounds: fall back to the box center region
        let m = &views.meta;
        let p = Vector3::from_fn(|k, _| {
            let (a, b) = (m.bounds_min[k], m.bounds_max[k]);
            a + (b - a) * r.random_range(0.25..0.75)
        });
        Placement {
            position: p,
            scale: 0.02 * m.diameter(),
            color: [0.5; 3],
        }
    })
}

fn build(views: &ViewSet, n: usize, seed: u64, random_colors: bool) -> Result<GaussianScene> {
    if n == 0 {
        return Err(Error::param("n_gaussians", "must be at least 1"));
    }
    if views.is_empty() {
        return Err(Error::Data("cannot initialize from an empty view set".into()));
    }
    let mut train = views.train_indices();
    if train.is_empty() {
        train = (0..views.len()).collect();
    }
    let mut r = rng::seeded(seed, &[stream::SCENE_INIT]);
    let mut colors = rng::seeded(seed, &[stream::SCENE_INIT, 1]);
    let mut gs = Vec::with_capacity(n);
    for _ in 0..n {
        let p = place(views, &train, &mut r);
        let color = if random_colors {
            [
                colors.random_range(0.0..1.0),
                colors.random_range(0.0..1.0),
                colors.random_range(0.0..1.0),
            ]
        } else {
            p.color
        };
        let mut g = Gaussian::new(
            [p.position.x, p.position.y, p.position.z],
            [p.scale; 3],
            0.5,
            [0.5; 3],
        );
        g.color_logit = color.map(|c| logit(c.clamp(0.02, 0.98)));
        gs.push(g);
    }
    GaussianScene::new(gs, views.meta.background)
}

/// Places `n` Gaussians by back-projecting random LR pixels of the training
/// views to random depths inside the scene bounds, preferring points that
/// every training camera sees. Colors come from the source pixel.
pub fn init_scene_from_views(views: &ViewSet, n: usize, seed: u64) -> Result<GaussianScene> {
    build(views, n, seed, false)
}

/// Same placement as [`init_scene_from_views`] with uniformly random colors.
pub fn random_color_scene(views: &ViewSet, n: usize, seed: u64) -> Result<GaussianScene> {
    build(views, n, seed, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic_scene, SyntheticKind};

    #[test]
    fn placed_inside_some_frustum_and_deterministic() {
        let vs = make_synthetic_scene(SyntheticKind::BlobCluster { blobs: 4 }, 6, 16, 2, 2).unwrap();
        let a = init_scene_from_views(&vs, 50, 9).unwrap();
        assert_eq!(a, init_scene_from_views(&vs, 50, 9).unwrap());
        for g in &a.gaussians {
            let p = Vector3::from(g.position);
            assert!((0..vs.len()).any(|i| vs.lr_camera(i).sees(&p)));
        }
        assert!(init_scene_from_views(&vs, 0, 9).is_err());
    }
}
