//! Multi-view datasets: loading, saving, synthetic generation and splits.
//!
//! On disk a dataset is a directory holding `poses.json`, the LR images in
//! `images_lr/view_%03d.png` and, optionally, HR ground truth in
//! `images_hr/view_%03d.png`. Poses are row-major 4x4 world-to-camera
//! matrices; intrinsics, width and height describe the LR image named by
//! `file`.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{self, stream};
use crate::scene::{render, Camera, Gaussian, GaussianScene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    /// Full-resolution camera.
    pub camera: Camera,
    pub lr: Image,
    pub hr: Option<Image>,
    pub split: Split,
}

/// Axis-aligned region containing the scene content, plus background color.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub background: [f64; 3],
}

impl Default for SceneMeta {
    fn default() -> Self {
        Self {
            bounds_min: [-1.0; 3],
            bounds_max: [1.0; 3],
            background: [0.0; 3],
        }
    }
}

impl SceneMeta {
    pub fn diameter(&self) -> f64 {
        (0..3)
            .map(|k| (self.bounds_max[k] - self.bounds_min[k]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.bounds_min[k] && p[k] <= self.bounds_max[k])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub views: Vec<View>,
    pub sr_factor: usize,
    pub meta: SceneMeta,
}

impl ViewSet {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.views.len())
            .filter(|&i| self.views[i].split == split)
            .collect()
    }

    pub fn train_indices(&self) -> Vec<usize> {
        self.indices(Split::Train)
    }

    pub fn test_indices(&self) -> Vec<usize> {
        self.indices(Split::Test)
    }

    pub fn lr_camera(&self, i: usize) -> Camera {
        self.views[i].camera.downscaled(self.sr_factor)
    }

    pub fn hr_size(&self) -> (usize, usize) {
        let c = &self.views[0].camera;
        (c.width, c.height)
    }

    pub fn lr_size(&self) -> (usize, usize) {
        let (w, h) = self.hr_size();
        (w / self.sr_factor, h / self.sr_factor)
    }

    /// HR ground truth for view `i`, or a data error naming the view.
    pub fn ground_truth(&self, i: usize) -> Result<&Image> {
        self.views[i]
            .hr
            .as_ref()
            .ok_or_else(|| Error::Data(format!("view {i} has no HR ground truth")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::Data("dataset has no views".into()));
        }
        if self.sr_factor == 0 {
            return Err(Error::param("sr_factor", "must be at least 1"));
        }
        let (hw, hh) = self.hr_size();
        if hw % self.sr_factor != 0 || hh % self.sr_factor != 0 {
            return Err(Error::Shape(format!(
                "HR size {hw}x{hh} is not divisible by sr_factor {}",
                self.sr_factor
            )));
        }
        let (lw, lh) = self.lr_size();
        for (i, v) in self.views.iter().enumerate() {
            v.camera.validate()?;
            if (v.camera.width, v.camera.height) != (hw, hh) {
                return Err(Error::Shape(format!(
                    "view {i}: camera is {}x{}, expected {hw}x{hh}",
                    v.camera.width, v.camera.height
                )));
            }
            if v.lr.shape() != (lw, lh, 3) {
                return Err(Error::Shape(format!(
                    "view {i}: LR image is {:?}, expected ({lw}, {lh}, 3)",
                    v.lr.shape()
                )));
            }
            if let Some(hr) = &v.hr {
                if hr.shape() != (hw, hh, 3) {
                    return Err(Error::Shape(format!(
                        "view {i}: HR image is {:?}, expected ({hw}, {hh}, 3)",
                        hr.shape()
                    )));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over the 8-bit image contents and the pose parameters.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.sr_factor as u64).to_le_bytes());
        for v in &self.views {
            for x in v.camera.w2c().iter().chain(v.camera.intrinsics().iter()) {
                h.update(x.to_le_bytes());
            }
            h.update([v.split as u8]);
            h.update(v.lr.to_u8());
            if let Some(hr) = &v.hr {
                h.update(hr.to_u8());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Tags views at indices divisible by `k` as test, the rest as train. With
/// fewer than `k` views nothing is held out.
pub fn split_every_kth(views: &ViewSet, k: usize) -> Result<ViewSet> {
    if k < 2 {
        return Err(Error::param("k", "must be at least 2"));
    }
    let degenerate = views.len() < k;
    if degenerate {
        log::warn!("degenerate split: {} views with k={k}; every view is kept for training", views.len());
    }
    let mut out = views.clone();
    for (i, v) in out.views.iter_mut().enumerate() {
        v.split = if !degenerate && i % k == 0 { Split::Test } else { Split::Train };
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseFile {
    sr_factor: usize,
    views: Vec<PoseEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<SceneMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseEntry {
    file: String,
    intrinsics: [f64; 4],
    w2c: Vec<f64>,
    width: usize,
    height: usize,
    #[serde(default)]
    split: Split,
}

fn view_file(i: usize) -> String {
    format!("view_{i:03}.png")
}

pub fn save_dataset(views: &ViewSet, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    views.validate()?;
    let lr_dir = root.join("images_lr");
    fs::create_dir_all(&lr_dir).map_err(|e| Error::io(&lr_dir, e))?;
    let has_hr = views.views.iter().any(|v| v.hr.is_some());
    let hr_dir = root.join("images_hr");
    if has_hr {
        fs::create_dir_all(&hr_dir).map_err(|e| Error::io(&hr_dir, e))?;
    }
    let mut entries = Vec::with_capacity(views.len());
    for (i, v) in views.views.iter().enumerate() {
        let file = view_file(i);
        v.lr.save_png(lr_dir.join(&file))?;
        if let Some(hr) = &v.hr {
            hr.save_png(hr_dir.join(&file))?;
        }
        let lr_cam = v.camera.downscaled(views.sr_factor);
        entries.push(PoseEntry {
            file,
            intrinsics: lr_cam.intrinsics(),
            w2c: lr_cam.w2c().to_vec(),
            width: lr_cam.width,
            height: lr_cam.height,
            split: v.split,
        });
    }
    let pf = PoseFile {
        sr_factor: views.sr_factor,
        views: entries,
        meta: Some(views.meta),
    };
    let path = root.join("poses.json");
    let text = serde_json::to_string_pretty(&pf).expect("poses serialize");
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_dataset(root: impl AsRef<Path>) -> Result<ViewSet> {
    let root = root.as_ref();
    let path = root.join("poses.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::Parse {
        path: path.clone(),
        line: 0,
        column: 0,
        msg: format!("cannot read poses file: {e}"),
    })?;
    let pf: PoseFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.clone(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    if pf.sr_factor == 0 {
        return Err(Error::param("sr_factor", "must be at least 1"));
    }
    let lr_dir = root.join("images_lr");
    let pngs = count_pngs(&lr_dir)?;
    if pngs != pf.views.len() {
        return Err(Error::Data(format!(
            "{} poses but {pngs} images in {}",
            pf.views.len(),
            lr_dir.display()
        )));
    }
    let hr_dir = root.join("images_hr");
    let mut views = Vec::with_capacity(pf.views.len());
    for (i, e) in pf.views.iter().enumerate() {
        let w2c: [f64; 16] = e.w2c.as_slice().try_into().map_err(|_| {
            Error::Data(format!("view {i}: w2c has {} entries, expected 16", e.w2c.len()))
        })?;
        let lr_cam = Camera::from_w2c(e.intrinsics, e.width, e.height, &w2c)
            .map_err(|err| Error::Data(format!("view {i} ({}): {err}", e.file)))?;
        let lr_path = lr_dir.join(&e.file);
        if !lr_path.is_file() {
            return Err(Error::Data(format!("view {i}: missing image {}", lr_path.display())));
        }
        let lr = Image::load_png(&lr_path)?;
        let hr_path = hr_dir.join(&e.file);
        let hr = if hr_path.is_file() {
            Some(Image::load_png(&hr_path)?)
        } else {
            None
        };
        views.push(View {
            camera: lr_cam.upscaled(pf.sr_factor),
            lr,
            hr,
            split: e.split,
        });
    }
    let vs = ViewSet {
        views,
        sr_factor: pf.sr_factor,
        meta: pf.meta.unwrap_or_default(),
    };
    vs.validate()?;
    Ok(vs)
}

fn count_pngs(dir: &Path) -> Result<usize> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut n = 0;
    for entry in rd {
        let p: PathBuf = entry.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "png") {
            n += 1;
        }
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SyntheticKind {
    /// A flat square carrying a procedural color texture.
    TexturedPlane,
    /// A fixed set of colored Gaussians rendered with the scene renderer.
    BlobCluster { blobs: usize },
    /// Opaque flat patches tiling a sphere: a closed surface whose views
    /// agree under depth-guided warping.
    PatchSphere { patches: usize },
}

/// Ground-truth Gaussians of a blob cluster; the dataset renders these.
pub fn blob_cluster_scene(blobs: usize, seed: u64) -> Result<GaussianScene> {
    if blobs == 0 {
        return Err(Error::param("blobs", "must be at least 1"));
    }
    let mut r = rng::seeded(seed, &[stream::SYNTHETIC, 1]);
    let mut gs = Vec::with_capacity(blobs);
    for _ in 0..blobs {
        // uniform in a ball of radius 0.55
        let p = loop {
            let p = Vector3::new(
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
                r.random_range(-1.0..1.0),
            );
            if p.norm() <= 1.0 {
                break p * 0.55;
            }
        };
        let size = r.random_range(0.05..0.16);
        let scale = [
            size * r.random_range(0.5..1.5),
            size * r.random_range(0.5..1.5),
            size * r.random_range(0.5..1.5),
        ];
        let hue = r.random_range(0.0..1.0);
        let mut g = Gaussian::new(
            [p.x, p.y, p.z],
            scale,
            r.random_range(0.75..0.95),
            hsv(hue, r.random_range(0.5..0.9), r.random_range(0.6..1.0)),
        );
        let q = UnitQuaternion::from_euler_angles(
            r.random_range(-3.1..3.1),
            r.random_range(-1.5..1.5),
            r.random_range(-3.1..3.1),
        );
        g.rotation = [q.w, q.i, q.j, q.k];
        gs.push(g);
    }
    GaussianScene::new(gs, [0.0; 3])
}

/// Ground-truth Gaussians of a patch sphere of radius 0.5: flat discs on a
/// Fibonacci lattice, oriented tangent to the sphere.
pub fn patch_sphere_scene(patches: usize, seed: u64) -> Result<GaussianScene> {
    if patches == 0 {
        return Err(Error::param("patches", "must be at least 1"));
    }
    const RADIUS: f64 = 0.5;
    let mut r = rng::seeded(seed, &[stream::SYNTHETIC, 2]);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    // disc radius that covers the sphere with some overlap
    let size = 1.6 * RADIUS * (4.0 / patches as f64).sqrt();
    let hue0 = r.random_range(0.0..1.0);
    let phase: [f64; 4] = std::array::from_fn(|_| r.random_range(0.0..std::f64::consts::TAU));
    let gs = (0..patches)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / patches as f64;
            let ring = (1.0 - z * z).sqrt();
            let phi = golden * k as f64;
            let n = Vector3::new(ring * phi.cos(), ring * phi.sin(), z);
            let p = n * RADIUS;
            // color is a smooth function of the surface point, so the order
            // in which overlapping patches composite barely matters
            let hue = hue0 + 0.12 * (2.0 * n.x + phase[0]).sin() + 0.08 * (3.0 * n.z + phase[1]).sin();
            let sat = 0.6 + 0.15 * (2.5 * n.y + phase[2]).sin();
            let val = 0.75 + 0.12 * (3.0 * n.x * n.z + phase[3]).sin();
            let color = hsv(hue, sat, val);
            let mut g = Gaussian::new([p.x, p.y, p.z], [size, size, 0.01 * size], 0.98, color);
            let q = UnitQuaternion::rotation_between(&Vector3::z(), &n)
                .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
            g.rotation = [q.w, q.i, q.j, q.k];
            g
        })
        .collect();
    GaussianScene::new(gs, [0.0; 3])
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.fract() * 6.0).min(5.999_999);
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Orbit of `n` cameras around the origin at a fixed elevation.
pub fn orbit_cameras(
    n: usize,
    radius: f64,
    elevation_deg: f64,
    focal: f64,
    size: usize,
) -> Result<Vec<Camera>> {
    let e = elevation_deg.to_radians();
    (0..n)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / n as f64;
            let eye = Vector3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin()) * radius;
            Camera::look_at(
                eye,
                Vector3::zeros(),
                Vector3::z(),
                [focal, focal, size as f64 / 2.0, size as f64 / 2.0],
                size,
                size,
            )
        })
        .collect()
}

/// Procedural texture for the plane: random colored cells with a fine
/// sinusoidal overlay.
struct PlaneTexture {
    cells: usize,
    colors: Vec<[f64; 3]>,
}

impl PlaneTexture {
    const HALF: f64 = 1.0;

    fn new(seed: u64) -> Self {
        let mut r = rng::seeded(seed, &[stream::SYNTHETIC, 2]);
        let cells = 6;
        let colors = (0..cells * cells)
            .map(|_| hsv(r.random_range(0.0..1.0), r.random_range(0.3..0.8), r.random_range(0.4..0.95)))
            .collect();
        Self { cells, colors }
    }

    fn sample(&self, x: f64, y: f64) -> Option<[f64; 3]> {
        if x.abs() > Self::HALF || y.abs() > Self::HALF {
            return None;
        }
        let n = self.cells as f64;
        let cx = (((x + Self::HALF) / (2.0 * Self::HALF) * n) as usize).min(self.cells - 1);
        let cy = (((y + Self::HALF) / (2.0 * Self::HALF) * n) as usize).min(self.cells - 1);
        let base = self.colors[cy * self.cells + cx];
        let tau = std::f64::consts::TAU;
        let stripes = 0.12 * (tau * 5.0 * (x + 0.5 * y)).sin() + 0.08 * (tau * 7.0 * (y - 0.3 * x)).sin();
        Some(base.map(|c| (c + stripes).clamp(0.0, 1.0)))
    }
}

fn render_plane(tex: &PlaneTexture, cam: &Camera, background: [f64; 3]) -> Image {
    const SS: usize = 4;
    let center = cam.center();
    let mut out = Image::new(cam.width, cam.height, 3);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut acc = [0.0; 3];
            for sy in 0..SS {
                for sx in 0..SS {
                    let u = x as f64 + (sx as f64 + 0.5) / SS as f64;
                    let v = y as f64 + (sy as f64 + 0.5) / SS as f64;
                    let d = cam.unproject(u, v, 1.0) - center;
                    let col = if d.z.abs() > 1e-12 {
                        let s = -center.z / d.z;
                        let p = center + d * s;
                        if s > 0.0 {
                            tex.sample(p.x, p.y).unwrap_or(background)
                        } else {
                            background
                        }
                    } else {
                        background
                    };
                    for c in 0..3 {
                        acc[c] += col[c];
                    }
                }
            }
            for c in 0..3 {
                out.set(x, y, c, acc[c] / (SS * SS) as f64);
            }
        }
    }
    out
}

/// Builds a synthetic dataset with HR ground truth and area-averaged LR
/// images. All views are tagged train; apply [`split_every_kth`] afterwards.
pub fn make_synthetic_scene(
    kind: SyntheticKind,
    n_views: usize,
    image_size: usize,
    sr_factor: usize,
    seed: u64,
) -> Result<ViewSet> {
    if n_views < 2 {
        return Err(Error::param("n_views", "must be at least 2"));
    }
    if sr_factor == 0 || image_size == 0 || !image_size.is_multiple_of(sr_factor) {
        return Err(Error::param(
            "image_size",
            format!("{image_size} must be a positive multiple of sr_factor {sr_factor}"),
        ));
    }
    let s = image_size as f64;
    let (cams, hr, meta): (Vec<Camera>, Vec<Image>, SceneMeta) = match kind {
        SyntheticKind::BlobCluster { blobs } => {
            let scene = blob_cluster_scene(blobs, seed)?;
            let radius = 3.0;
            let cams = orbit_cameras(n_views, radius, 25.0, 0.5 * s * radius / 0.85, image_size)?;
            let hr = cams.iter().map(|c| render(&scene, c).image).collect();
            let meta = SceneMeta {
                bounds_min: [-0.8; 3],
                bounds_max: [0.8; 3],
                background: scene.background,
            };
            (cams, hr, meta)
        }
        SyntheticKind::PatchSphere { patches } => {
            let scene = patch_sphere_scene(patches, seed)?;
            let radius = 3.0;
            let cams = orbit_cameras(n_views, radius, 25.0, 0.5 * s * radius / 0.75, image_size)?;
            let hr = cams.iter().map(|c| render(&scene, c).image).collect();
            let meta = SceneMeta {
                bounds_min: [-0.6; 3],
                bounds_max: [0.6; 3],
                background: scene.background,
            };
            (cams, hr, meta)
        }
        SyntheticKind::TexturedPlane => {
            let tex = PlaneTexture::new(seed);
            let radius = 3.5;
            let cams = orbit_cameras(n_views, radius, 55.0, 0.5 * s * radius / 1.35, image_size)?;
            let background = [0.0; 3];
            let hr = cams.iter().map(|c| render_plane(&tex, c, background)).collect();
            let meta = SceneMeta {
                bounds_min: [-1.0, -1.0, -0.05],
                bounds_max: [1.0, 1.0, 0.05],
                background,
            };
            (cams, hr, meta)
        }
    };
    let views = cams
        .into_iter()
        .zip(hr)
        .map(|(camera, hr)| {
            Ok(View {
                lr: hr.area_downsample(sr_factor)?,
                camera,
                hr: Some(hr),
                split: Split::Train,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let vs = ViewSet {
        views,
        sr_factor,
        meta,
    };
    vs.validate()?;
    Ok(vs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ViewSet {
        make_synthetic_scene(SyntheticKind::BlobCluster { blobs: 3 }, 4, 16, 2, 5).unwrap()
    }

    #[test]
    fn split_examples() {
        let mut vs = tiny();
        let v0 = vs.views[0].clone();
        vs.views = vec![v0; 20];
        assert_eq!(split_every_kth(&vs, 8).unwrap().test_indices(), vec![0, 8, 16]);
        vs.views.truncate(16);
        let s = split_every_kth(&vs, 8).unwrap();
        assert_eq!((s.test_indices().len(), s.train_indices().len()), (2, 14));
        vs.views.truncate(5);
        let s = split_every_kth(&vs, 8).unwrap();
        assert!(s.test_indices().is_empty());
        assert_eq!(s.train_indices().len(), 5);
        assert!(split_every_kth(&vs, 1).is_err());
    }

    #[test]
    fn lr_is_area_average_of_hr() {
        for kind in [SyntheticKind::TexturedPlane, SyntheticKind::BlobCluster { blobs: 3 }, SyntheticKind::PatchSphere { patches: 20 }] {
            let vs = make_synthetic_scene(kind, 3, 16, 2, 1).unwrap();
            for v in &vs.views {
                assert_eq!(v.lr, v.hr.as_ref().unwrap().area_downsample(2).unwrap());
            }
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        assert_eq!(tiny().digest(), tiny().digest());
        let other = make_synthetic_scene(SyntheticKind::BlobCluster { blobs: 3 }, 4, 16, 2, 6).unwrap();
        assert_ne!(tiny().digest(), other.digest());
        assert!(make_synthetic_scene(SyntheticKind::TexturedPlane, 1, 16, 2, 0).is_err());
    }

    #[test]
    fn plane_views_see_texture() {
        let vs = make_synthetic_scene(SyntheticKind::TexturedPlane, 4, 32, 2, 3).unwrap();
        for v in &vs.views {
            let hr = v.hr.as_ref().unwrap();
            // the image center looks at the plane center
            let c: f64 = (0..3).map(|c| hr.get(16, 16, c)).sum();
            assert!(c > 0.1);
        }
    }
}
