//! The optimizable 3D scene: anisotropic Gaussians with flat RGB colors,
//! a pinhole camera model, a differentiable rasterizer and the fitting loop.

mod camera;
pub mod checkpoint;
mod fit;
mod init;
pub mod loss;
pub mod render;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::Image;

pub use camera::Camera;
pub use fit::{fit, fit_resume, fit_with, Adam, FitConfig, FitReport, LearningRates, LossWeights};
pub use init::{init_scene_from_views, random_color_scene};
pub use loss::{loss_all, subsample, LossValue};
pub use render::{render, render_with, RenderSettings, Rendered};

/// Number of scalar parameters per Gaussian.
pub const PARAMS_PER_GAUSSIAN: usize = 14;

/// Raw (pre-activation) parameters of one Gaussian.
///
/// Activations: scales are `exp(log_scale)`, the rotation is the normalized
/// quaternion `(w, x, y, z)`, opacity and color go through a logistic sigmoid.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Gaussian {
    pub position: [f64; 3],
    pub log_scale: [f64; 3],
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color_logit: [f64; 3],
}

/// Parameter groups, each with its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Position,
    Scale,
    Rotation,
    Opacity,
    Color,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] = [
        ParamGroup::Position,
        ParamGroup::Scale,
        ParamGroup::Rotation,
        ParamGroup::Opacity,
        ParamGroup::Color,
    ];

    /// Group of each entry of [`Gaussian::to_array`].
    pub const LAYOUT: [ParamGroup; PARAMS_PER_GAUSSIAN] = [
        ParamGroup::Position,
        ParamGroup::Position,
        ParamGroup::Position,
        ParamGroup::Scale,
        ParamGroup::Scale,
        ParamGroup::Scale,
        ParamGroup::Rotation,
        ParamGroup::Rotation,
        ParamGroup::Rotation,
        ParamGroup::Rotation,
        ParamGroup::Opacity,
        ParamGroup::Color,
        ParamGroup::Color,
        ParamGroup::Color,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Position => "position",
            ParamGroup::Scale => "scale",
            ParamGroup::Rotation => "rotation",
            ParamGroup::Opacity => "opacity",
            ParamGroup::Color => "color",
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-6, 1.0 - 1e-6);
    (p / (1.0 - p)).ln()
}

impl Gaussian {
    pub fn new(position: [f64; 3], scale: [f64; 3], opacity: f64, color: [f64; 3]) -> Self {
        Self {
            position,
            log_scale: scale.map(f64::ln),
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(opacity),
            color_logit: color.map(logit),
        }
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn color(&self) -> [f64; 3] {
        self.color_logit.map(sigmoid)
    }

    pub fn unit_rotation(&self) -> [f64; 4] {
        let q = self.rotation;
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if n == 0.0 {
            [1.0, 0.0, 0.0, 0.0]
        } else {
            q.map(|v| v / n)
        }
    }

    pub fn to_array(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut a = [0.0; PARAMS_PER_GAUSSIAN];
        a[0..3].copy_from_slice(&self.position);
        a[3..6].copy_from_slice(&self.log_scale);
        a[6..10].copy_from_slice(&self.rotation);
        a[10] = self.opacity_logit;
        a[11..14].copy_from_slice(&self.color_logit);
        a
    }

    pub fn from_array(a: &[f64; PARAMS_PER_GAUSSIAN]) -> Self {
        Self {
            position: [a[0], a[1], a[2]],
            log_scale: [a[3], a[4], a[5]],
            rotation: [a[6], a[7], a[8], a[9]],
            opacity_logit: a[10],
            color_logit: [a[11], a[12], a[13]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianScene {
    pub gaussians: Vec<Gaussian>,
    pub background: [f64; 3],
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian>, background: [f64; 3]) -> Result<Self> {
        let scene = Self {
            gaussians,
            background,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.gaussians.is_empty() {
            return Err(Error::Data("scene needs at least one Gaussian".into()));
        }
        if let Some(i) = self
            .gaussians
            .iter()
            .position(|g| g.to_array().iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Data(format!("Gaussian {i} has non-finite parameters")));
        }
        Ok(())
    }

    /// Renormalizes every quaternion to unit length.
    pub fn normalize_rotations(&mut self) {
        for g in &mut self.gaussians {
            g.rotation = g.unit_rotation();
        }
    }

    /// SHA-256 over the little-endian parameter bytes and background.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.gaussians.len() as u64).to_le_bytes());
        for g in &self.gaussians {
            for v in g.to_array() {
                h.update(v.to_le_bytes());
            }
        }
        for v in self.background {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.gaussians.iter().map(|g| g.position).collect()
    }
}

/// Gradient of a scalar objective with respect to every raw scene parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGrad {
    pub gaussians: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
}

impl SceneGrad {
    pub fn zeros(n: usize) -> Self {
        Self {
            gaussians: vec![[0.0; PARAMS_PER_GAUSSIAN]; n],
        }
    }

    pub fn add_assign(&mut self, other: &SceneGrad) {
        for (a, b) in self.gaussians.iter_mut().zip(&other.gaussians) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for a in &mut self.gaussians {
            for x in a.iter_mut() {
                *x *= k;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.gaussians
            .iter()
            .flat_map(|a| a.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Per-channel background image helper.
pub fn background_image(width: usize, height: usize, bg: [f64; 3]) -> Image {
    Image::from_fn(width, height, 3, |_, _, c| bg[c])
}
