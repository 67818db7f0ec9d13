//! Forward and backward passes of the splatting rasterizer.
//!
//! Each Gaussian is projected with the local affine (EWA) approximation of
//! the perspective map, sorted by camera depth, and alpha-composited front to
//! back per pixel. The backward pass walks the same per-pixel lists back to
//! front and chains through the projection to the raw parameters.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::{Camera, GaussianScene, SceneGrad, PARAMS_PER_GAUSSIAN};
use crate::image::Image;

const TILE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderSettings {
    /// Contributions below this alpha are skipped.
    pub alpha_min: f64,
    /// Per-splat alpha is clamped to this value.
    pub alpha_max: f64,
    /// Gaussians closer than this camera depth are culled.
    pub near: f64,
    /// Isotropic variance (pixels^2) added to every projected covariance.
    pub cov2d_floor: f64,
    /// Restrict each splat to the box where it can exceed `alpha_min`.
    pub bounded_footprint: bool,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            near: 0.05,
            cov2d_floor: 0.3,
            bounded_footprint: true,
        }
    }
}

impl RenderSettings {
    /// No thresholds or clamps: the image is a smooth function of every
    /// parameter as long as the depth order does not change.
    pub fn exact() -> Self {
        Self {
            alpha_min: 0.0,
            alpha_max: 1.0,
            bounded_footprint: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: Image,
    /// Alpha-weighted mean over splats of the camera depth where each splat's
    /// density peaks along the pixel ray; 0 where nothing was drawn.
    pub depth: Vec<f64>,
    /// Accumulated opacity per pixel.
    pub alpha: Vec<f64>,
    /// Number of Gaussians that projected in front of the camera.
    pub visible: usize,
}

impl Rendered {
    pub fn is_empty(&self) -> bool {
        self.visible == 0
    }

    pub fn depth_image(&self) -> Image {
        Image::from_vec(self.image.width(), self.image.height(), 1, self.depth.clone())
            .expect("depth buffer matches image size")
    }

    /// Depth map with pixels below `min_alpha` coverage set to 0 (no surface).
    pub fn surface_depth(&self, min_alpha: f64) -> Image {
        let data = self
            .depth
            .iter()
            .zip(&self.alpha)
            .map(|(&d, &a)| if a >= min_alpha { d } else { 0.0 })
            .collect();
        Image::from_vec(self.image.width(), self.image.height(), 1, data)
            .expect("depth buffer matches image size")
    }
}

#[derive(Debug, Clone)]
struct Splat {
    index: usize,
    mean: Vector2<f64>,
    conic: [f64; 3],
    depth: f64,
    opacity: f64,
    color: [f64; 3],
    bbox: [usize; 4],
    /// View-space precision matrix and precision times mean, for the depth of
    /// peak density along each pixel ray.
    precision: Matrix3<f64>,
    precision_mean: Vector3<f64>,
    // intermediates reused by the backward pass
    p_cam: Vector3<f64>,
    rot: Matrix3<f64>,
    scale_sq: Vector3<f64>,
    cov_view: Matrix3<f64>,
    jac: Matrix2x3<f64>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub rendered: Rendered,
    splats: Vec<Splat>,
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    final_t: Vec<f64>,
    settings: RenderSettings,
}

fn quat_to_rot(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

fn project_splats(scene: &GaussianScene, cam: &Camera, s: &RenderSettings) -> Vec<Splat> {
    let (w, h) = (cam.width as f64, cam.height as f64);
    let mut splats = Vec::with_capacity(scene.len());
    for (index, g) in scene.gaussians.iter().enumerate() {
        let p = Vector3::from(g.position);
        let p_cam = cam.rotation * p + cam.translation;
        if p_cam.z < s.near {
            continue;
        }
        let opacity = g.opacity();
        if opacity < s.alpha_min {
            continue;
        }
        let rot = quat_to_rot(g.unit_rotation());
        let scale_sq = Vector3::from(g.log_scale.map(|v| (2.0 * v).exp()));
        let cov_world = rot * Matrix3::from_diagonal(&scale_sq) * rot.transpose();
        let cov_view = cam.rotation * cov_world * cam.rotation.transpose();
        let (x, y, z) = (p_cam.x, p_cam.y, p_cam.z);
        let jac = Matrix2x3::new(
            cam.fx / z,
            0.0,
            -cam.fx * x / (z * z),
            0.0,
            cam.fy / z,
            -cam.fy * y / (z * z),
        );
        let cov2d = jac * cov_view * jac.transpose() + Matrix2::identity() * s.cov2d_floor;
        let (a, b, c) = (cov2d[(0, 0)], cov2d[(0, 1)], cov2d[(1, 1)]);
        let det = a * c - b * b;
        if !(det > 0.0) {
            continue;
        }
        let conic = [c / det, -b / det, a / det];
        let mean = Vector2::new(cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy);
        let bbox = if s.bounded_footprint {
            let mid = 0.5 * (a + c);
            let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
            let r2 = 2.0 * (opacity / s.alpha_min).ln() * lambda_max;
            let r = r2.max(0.0).sqrt();
            let x0 = (mean.x - r - 0.5).ceil().max(0.0);
            let x1 = (mean.x + r + 0.5).floor().min(w);
            let y0 = (mean.y - r - 0.5).ceil().max(0.0);
            let y1 = (mean.y + r + 0.5).floor().min(h);
            if x0 >= x1 || y0 >= y1 {
                continue;
            }
            [x0 as usize, x1 as usize, y0 as usize, y1 as usize]
        } else {
            [0, cam.width, 0, cam.height]
        };
        let precision = cov_view.try_inverse().unwrap_or_else(Matrix3::zeros);
        splats.push(Splat {
            index,
            mean,
            conic,
            depth: z,
            opacity,
            color: g.color(),
            bbox,
            precision,
            precision_mean: precision * p_cam,
            p_cam,
            rot,
            scale_sq,
            cov_view,
            jac,
        });
    }
    // ties broken by storage index keep the order deterministic
    splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    splats
}

/// Camera depth where the Gaussian's density peaks along the ray through
/// normalized image point `(ux, uy)`; the center depth if that is undefined.
#[inline]
fn ray_depth(sp: &Splat, ux: f64, uy: f64) -> f64 {
    let d = Vector3::new(ux, uy, 1.0);
    let den = d.dot(&(sp.precision * d));
    if !(den > 0.0) {
        return sp.depth;
    }
    let z = d.dot(&sp.precision_mean) / den;
    if z.is_finite() && z > 0.0 {
        z
    } else {
        sp.depth
    }
}

#[inline]
fn splat_alpha(sp: &Splat, px: f64, py: f64, s: &RenderSettings) -> Option<(f64, f64, f64, f64)> {
    let dx = px - sp.mean.x;
    let dy = py - sp.mean.y;
    let [ca, cb, cc] = sp.conic;
    let power = -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy;
    if power > 0.0 {
        return None;
    }
    let g = power.exp();
    let raw = sp.opacity * g;
    if raw < s.alpha_min {
        return None;
    }
    Some((raw.min(s.alpha_max), g, dx, dy))
}

/// Renders with default settings.
pub fn render(scene: &GaussianScene, cam: &Camera) -> Rendered {
    forward(scene, cam, &RenderSettings::default()).rendered
}

pub fn render_with(scene: &GaussianScene, cam: &Camera, settings: &RenderSettings) -> Rendered {
    forward(scene, cam, settings).rendered
}

pub fn forward(scene: &GaussianScene, cam: &Camera, settings: &RenderSettings) -> Forward {
    let splats = project_splats(scene, cam, settings);
    let (w, h) = (cam.width, cam.height);
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (k, sp) in splats.iter().enumerate() {
        let [x0, x1, y0, y1] = sp.bbox;
        for ty in y0 / TILE..=(y1 - 1) / TILE {
            for tx in x0 / TILE..=(x1 - 1) / TILE {
                tiles[ty * tiles_x + tx].push(k as u32);
            }
        }
    }

    let bg = scene.background;
    let mut image = Image::new(w, h, 3);
    let mut depth = vec![0.0; w * h];
    let mut alpha = vec![0.0; w * h];
    let mut final_t = vec![1.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut col = [0.0; 3];
            let mut dz = 0.0;
            for &k in &tiles[(y / TILE) * tiles_x + x / TILE] {
                let sp = &splats[k as usize];
                let [x0, x1, y0, y1] = sp.bbox;
                if x < x0 || x >= x1 || y < y0 || y >= y1 {
                    continue;
                }
                let Some((a, ..)) = splat_alpha(sp, px, py, settings) else {
                    continue;
                };
                let wgt = a * t;
                for c in 0..3 {
                    col[c] += sp.color[c] * wgt;
                }
                dz += ray_depth(sp, (px - cam.cx) / cam.fx, (py - cam.cy) / cam.fy) * wgt;
                t *= 1.0 - a;
            }
            let i = y * w + x;
            for c in 0..3 {
                image.set(x, y, c, col[c] + t * bg[c]);
            }
            let acc = 1.0 - t;
            alpha[i] = acc;
            depth[i] = if acc > 1e-8 { dz / acc } else { 0.0 };
            final_t[i] = t;
        }
    }
    Forward {
        rendered: Rendered {
            image,
            depth,
            alpha,
            visible: splats.len(),
        },
        splats,
        tiles,
        tiles_x,
        final_t,
        settings: *settings,
    }
}

#[derive(Clone, Copy, Default)]
struct SplatGrad {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

/// Gradient of a scalar loss with respect to the raw scene parameters, given
/// the loss gradient with respect to the rendered image.
pub fn backward(scene: &GaussianScene, cam: &Camera, fwd: &Forward, d_image: &Image) -> SceneGrad {
    let (w, h) = (cam.width, cam.height);
    assert_eq!(d_image.shape(), (w, h, 3), "image gradient shape");
    let s = &fwd.settings;
    let bg = scene.background;
    let mut sg = vec![SplatGrad::default(); fwd.splats.len()];
    let mut contrib: Vec<(u32, f64, f64, f64, f64)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let dl = [d_image.get(x, y, 0), d_image.get(x, y, 1), d_image.get(x, y, 2)];
            if dl == [0.0; 3] {
                continue;
            }
            contrib.clear();
            for &k in &fwd.tiles[(y / TILE) * fwd.tiles_x + x / TILE] {
                let sp = &fwd.splats[k as usize];
                let [x0, x1, y0, y1] = sp.bbox;
                if x < x0 || x >= x1 || y < y0 || y >= y1 {
                    continue;
                }
                if let Some((a, g, dx, dy)) = splat_alpha(sp, px, py, s) {
                    contrib.push((k, a, g, dx, dy));
                }
            }
            let mut t = fwd.final_t[y * w + x];
            // color of everything behind the current splat, per unit transmittance
            let mut rest = bg;
            for &(k, a, g, dx, dy) in contrib.iter().rev() {
                let sp = &fwd.splats[k as usize];
                let t_before = t / (1.0 - a);
                let grad = &mut sg[k as usize];
                let mut d_alpha = 0.0;
                for c in 0..3 {
                    grad.color[c] += dl[c] * a * t_before;
                    d_alpha += dl[c] * t_before * (sp.color[c] - rest[c]);
                    rest[c] = sp.color[c] * a + (1.0 - a) * rest[c];
                }
                t = t_before;
                if sp.opacity * g > s.alpha_max {
                    continue;
                }
                grad.opacity += d_alpha * g;
                let d_power = d_alpha * sp.opacity * g;
                let [ca, cb, cc] = sp.conic;
                grad.mean[0] += d_power * (ca * dx + cb * dy);
                grad.mean[1] += d_power * (cb * dx + cc * dy);
                grad.conic[0] += d_power * (-0.5 * dx * dx);
                grad.conic[1] += d_power * (-dx * dy);
                grad.conic[2] += d_power * (-0.5 * dy * dy);
            }
        }
    }

    let mut out = SceneGrad::zeros(scene.len());
    for (sp, gr) in fwd.splats.iter().zip(&sg) {
        out.gaussians[sp.index] = chain_to_params(scene, cam, sp, gr);
    }
    out
}

fn chain_to_params(
    scene: &GaussianScene,
    cam: &Camera,
    sp: &Splat,
    gr: &SplatGrad,
) -> [f64; PARAMS_PER_GAUSSIAN] {
    let gauss = &scene.gaussians[sp.index];
    let mut out = [0.0; PARAMS_PER_GAUSSIAN];

    // conic -> 2D covariance: dL/dCov = -K G_K K with the off-diagonal
    // gradient split evenly over the two symmetric entries
    let [ca, cb, cc] = sp.conic;
    let k = Matrix2::new(ca, cb, cb, cc);
    let gk = Matrix2::new(gr.conic[0], 0.5 * gr.conic[1], 0.5 * gr.conic[1], gr.conic[2]);
    let g_cov2d = -(k * gk * k);

    // cov2d = J M J^T
    let jac = &sp.jac;
    let g_m = jac.transpose() * g_cov2d * jac;
    let g_j = 2.0 * g_cov2d * jac * sp.cov_view;
    // M = W Sigma W^T
    let g_sigma = cam.rotation.transpose() * g_m * cam.rotation;
    // Sigma = R D R^T
    let d = Matrix3::from_diagonal(&sp.scale_sq);
    let g_r = 2.0 * g_sigma * sp.rot * d;
    let g_d = sp.rot.transpose() * g_sigma * sp.rot;
    for i in 0..3 {
        out[3 + i] = g_d[(i, i)] * 2.0 * sp.scale_sq[i];
    }

    let q = gauss.unit_rotation();
    let [qw, qx, qy, qz] = q;
    let dr = |m: [f64; 9]| -> f64 {
        let mut acc = 0.0;
        for r in 0..3 {
            for c in 0..3 {
                acc += g_r[(r, c)] * m[r * 3 + c];
            }
        }
        acc
    };
    let g_qhat = [
        dr([0.0, -2.0 * qz, 2.0 * qy, 2.0 * qz, 0.0, -2.0 * qx, -2.0 * qy, 2.0 * qx, 0.0]),
        dr([0.0, 2.0 * qy, 2.0 * qz, 2.0 * qy, -4.0 * qx, -2.0 * qw, 2.0 * qz, 2.0 * qw, -4.0 * qx]),
        dr([-4.0 * qy, 2.0 * qx, 2.0 * qw, 2.0 * qx, 0.0, 2.0 * qz, -2.0 * qw, 2.0 * qz, -4.0 * qy]),
        dr([-4.0 * qz, -2.0 * qw, 2.0 * qx, 2.0 * qw, -4.0 * qz, 2.0 * qy, 2.0 * qx, 2.0 * qy, 0.0]),
    ];
    let raw = gauss.rotation;
    let norm = (raw.iter().map(|v| v * v).sum::<f64>()).sqrt();
    let dot: f64 = (0..4).map(|i| q[i] * g_qhat[i]).sum();
    for i in 0..4 {
        out[6 + i] = (g_qhat[i] - q[i] * dot) / norm;
    }

    // projection of the mean plus the Jacobian's dependence on the position
    let (x, y, z) = (sp.p_cam.x, sp.p_cam.y, sp.p_cam.z);
    let (fx, fy) = (cam.fx, cam.fy);
    let (gu, gv) = (gr.mean[0], gr.mean[1]);
    let mut g_pc = Vector3::new(gu * fx / z, gv * fy / z, -gu * fx * x / (z * z) - gv * fy * y / (z * z));
    let z2 = z * z;
    let z3 = z2 * z;
    g_pc.x += g_j[(0, 2)] * (-fx / z2);
    g_pc.y += g_j[(1, 2)] * (-fy / z2);
    g_pc.z += g_j[(0, 0)] * (-fx / z2)
        + g_j[(0, 2)] * (2.0 * fx * x / z3)
        + g_j[(1, 1)] * (-fy / z2)
        + g_j[(1, 2)] * (2.0 * fy * y / z3);
    let g_p = cam.rotation.transpose() * g_pc;
    out[0..3].copy_from_slice(g_p.as_slice());

    out[10] = gr.opacity * sp.opacity * (1.0 - sp.opacity);
    for c in 0..3 {
        out[11 + c] = gr.color[c] * sp.color[c] * (1.0 - sp.color[c]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Gaussian;

    fn axis_camera(size: usize) -> Camera {
        let c = size as f64 / 2.0;
        Camera::new(
            [size as f64, size as f64, c, c],
            size,
            size,
            Matrix3::identity(),
            Vector3::new(0.0, 0.0, 4.0),
        )
        .unwrap()
    }

    #[test]
    fn centered_gaussian_peaks_at_principal_point() {
        let cam = axis_camera(32);
        let scene = GaussianScene::new(
            vec![Gaussian::new([0.0; 3], [0.3; 3], 0.999, [0.9, 0.9, 0.9])],
            [0.0; 3],
        )
        .unwrap();
        let r = render(&scene, &cam);
        let mut best = (0, 0, -1.0);
        for y in 0..32 {
            for x in 0..32 {
                let v = r.image.get(x, y, 0);
                if v > best.2 {
                    best = (x, y, v);
                }
            }
        }
        // principal point (16, 16) lies on the corner shared by pixels 15 and 16
        assert!((15..=16).contains(&best.0) && (15..=16).contains(&best.1));
        // isotropic: density peaks where the ray passes closest to the center
        let u = 0.5 / 32.0;
        assert!((r.depth[16 * 32 + 16] - 4.0 / (1.0 + 2.0 * u * u)).abs() < 1e-9);
    }

    #[test]
    fn transparent_scene_shows_background() {
        let cam = axis_camera(8);
        let mut g = Gaussian::new([0.0; 3], [0.3; 3], 0.5, [1.0, 0.0, 0.0]);
        g.opacity_logit = -40.0;
        let scene = GaussianScene::new(vec![g], [0.2, 0.4, 0.6]).unwrap();
        let r = render(&scene, &cam);
        for y in 0..8 {
            for x in 0..8 {
                for c in 0..3 {
                    assert_eq!(r.image.get(x, y, c), [0.2, 0.4, 0.6][c]);
                }
            }
        }
    }

    #[test]
    fn behind_camera_is_empty() {
        let cam = axis_camera(8);
        let scene = GaussianScene::new(
            vec![Gaussian::new([0.0, 0.0, -10.0], [0.3; 3], 0.9, [1.0; 3])],
            [0.5; 3],
        )
        .unwrap();
        let r = render(&scene, &cam);
        assert!(r.is_empty());
        assert!(r.alpha.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn opaque_front_splat_hides_back_one() {
        let cam = axis_camera(16);
        // front: opaque red at z=4 (camera depth), back: green at depth 6
        let front = Gaussian::new([0.0, 0.0, 0.0], [1.0; 3], 0.999, [1.0, 0.0, 0.0]);
        let back = Gaussian::new([0.0, 0.0, 2.0], [0.5; 3], 0.999, [0.0, 1.0, 0.0]);
        for order in [vec![front, back], vec![back, front]] {
            let scene = GaussianScene::new(order, [0.0; 3]).unwrap();
            let r = render(&scene, &cam);
            let px = [r.image.get(8, 8, 0), r.image.get(8, 8, 1), r.image.get(8, 8, 2)];
            // hand alpha chain at the pixel center, offset (0.5, 0.5) px from
            // the projected means; both splats clamp to alpha 0.99 or close
            let sp_front = project_splats(&scene, &cam, &RenderSettings::default());
            let a: Vec<f64> = sp_front
                .iter()
                .map(|sp| splat_alpha(sp, 8.5, 8.5, &RenderSettings::default()).unwrap().0)
                .collect();
            let red = 0.999999 * a[0];
            let green = 0.999999 * a[1] * (1.0 - a[0]);
            assert!(sp_front[0].depth < sp_front[1].depth);
            assert!((px[0] - red).abs() < 1e-5 && (px[1] - green).abs() < 1e-5);
            assert!(px[0] > 0.95 && px[1] < 0.02);
        }
    }
}
