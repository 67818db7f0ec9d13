//! Gradient-based scene fitting with per-group Adam.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{loss_with_subsampling, LossValue};
use super::render::{backward, forward, RenderSettings};
use super::{Camera, GaussianScene, ParamGroup, SceneGrad, PARAMS_PER_GAUSSIAN};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub position: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
    /// Rate multiplier reached at the last iteration of each fit; the
    /// multiplier decays exponentially from 1.
    pub final_scale: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 2e-3,
            scale: 1e-2,
            rotation: 5e-3,
            opacity: 5e-2,
            color: 2.5e-2,
            final_scale: 0.1,
        }
    }
}

impl LearningRates {
    pub fn get(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Position => self.position,
            ParamGroup::Scale => self.scale,
            ParamGroup::Rotation => self.rotation,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::Color => self.color,
        }
    }

    fn validate(&self) -> Result<()> {
        for g in ParamGroup::ALL {
            let v = self.get(g);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param("learning_rates", format!("{} rate {v} must be >= 0", g.name())));
            }
        }
        if !(self.final_scale > 0.0 && self.final_scale <= 1.0) {
            return Err(Error::param("learning_rates", format!("final_scale {} is outside (0, 1]", self.final_scale)));
        }
        Ok(())
    }

    /// Multiplier at iteration `it` of `iterations`.
    pub fn decay(&self, it: usize, iterations: usize) -> f64 {
        if iterations < 2 {
            return 1.0;
        }
        self.final_scale.powf(it as f64 / (iterations - 1) as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the LR agreement term.
    pub lambda: f64,
    /// D-SSIM share inside each term.
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            delta: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub iterations: usize,
    pub learning_rates: LearningRates,
    pub weights: LossWeights,
    /// HR/LR resolution ratio used by the LR term.
    pub sr_factor: usize,
    pub seed: u64,
    /// Views per optimizer step; 0 means all views.
    pub batch_size: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            learning_rates: LearningRates::default(),
            weights: LossWeights::default(),
            sr_factor: 2,
            seed: 0,
            batch_size: 4,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::param("iterations", "must be at least 1"));
        }
        let LossWeights { lambda, delta } = self.weights;
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::param("delta", format!("{delta} is outside [0, 1]")));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param("lambda", format!("{lambda} must be >= 0")));
        }
        if self.sr_factor == 0 {
            return Err(Error::param("sr_factor", "must be at least 1"));
        }
        self.learning_rates.validate()
    }
}

/// Adam with one learning rate per parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    pub rates: LearningRates,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplier on every rate for the next update.
    pub lr_scale: f64,
    m: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
    v: Vec<[f64; PARAMS_PER_GAUSSIAN]>,
    step: usize,
}

impl Adam {
    pub fn new(n: usize, rates: LearningRates) -> Self {
        Self {
            rates,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-10,
            lr_scale: 1.0,
            m: vec![[0.0; PARAMS_PER_GAUSSIAN]; n],
            v: vec![[0.0; PARAMS_PER_GAUSSIAN]; n],
            step: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.step
    }

    /// Number of Gaussians tracked.
    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn apply(&mut self, scene: &mut GaussianScene, grad: &SceneGrad) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let lr: [f64; PARAMS_PER_GAUSSIAN] = ParamGroup::LAYOUT.map(|g| self.rates.get(g) * self.lr_scale);
        for (i, g) in scene.gaussians.iter_mut().enumerate() {
            let mut p = g.to_array();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..PARAMS_PER_GAUSSIAN {
                let d = grad.gaussians[i][k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * d;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * d * d;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= lr[k] * mh / (vh.sqrt() + self.eps);
            }
            *g = super::Gaussian::from_array(&p);
        }
        scene.normalize_rotations();
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub scene: GaussianScene,
    /// Mean batch loss per iteration, before the step.
    pub losses: Vec<f64>,
}

impl FitReport {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().unwrap_or(&f64::NAN)
    }
}

/// One fitting target: a camera, the HR image to match and optionally the LR
/// observation for the subsampling term.
#[derive(Debug, Clone, Copy)]
pub struct FitView<'a> {
    pub camera: &'a Camera,
    pub target: &'a Image,
    pub lr: Option<&'a Image>,
}

/// Loss and scene gradient for one view.
pub fn view_loss_grad(
    scene: &GaussianScene,
    view: &FitView<'_>,
    weights: &LossWeights,
    sr_factor: usize,
    settings: &RenderSettings,
) -> Result<(LossValue, SceneGrad)> {
    let fwd = forward(scene, view.camera, settings);
    let (value, d_image) = loss_with_subsampling(
        &fwd.rendered.image,
        view.target,
        view.lr,
        sr_factor,
        weights.lambda,
        weights.delta,
    )?;
    if fwd.rendered.is_empty() {
        return Ok((value, SceneGrad::zeros(scene.len())));
    }
    Ok((value, backward(scene, view.camera, &fwd, &d_image)))
}

/// Fits `scene` to HR `targets` seen from `cameras`. `lr_images` may be empty
/// when the LR term is disabled.
pub fn fit(
    scene: &GaussianScene,
    targets: &[Image],
    cameras: &[Camera],
    lr_images: &[Image],
    config: &FitConfig,
) -> Result<FitReport> {
    fit_with(scene, targets, cameras, lr_images, config, |_, _| {})
}

/// [`fit`] with a per-iteration callback receiving `(iteration, loss)`.
pub fn fit_with(
    scene: &GaussianScene,
    targets: &[Image],
    cameras: &[Camera],
    lr_images: &[Image],
    config: &FitConfig,
    progress: impl FnMut(usize, f64),
) -> Result<FitReport> {
    let mut adam = Adam::new(scene.len(), config.learning_rates);
    fit_resume(scene, targets, cameras, lr_images, config, &mut adam, progress)
}

/// [`fit_with`] continuing from an existing optimizer state, so successive
/// calls behave like one long optimization. `adam` must match `scene` in size;
/// its rates are replaced by `config.learning_rates`.
pub fn fit_resume(
    scene: &GaussianScene,
    targets: &[Image],
    cameras: &[Camera],
    lr_images: &[Image],
    config: &FitConfig,
    adam: &mut Adam,
    mut progress: impl FnMut(usize, f64),
) -> Result<FitReport> {
    config.validate()?;
    if adam.len() != scene.len() {
        return Err(Error::Shape(format!(
            "optimizer tracks {} Gaussians, scene has {}",
            adam.len(),
            scene.len()
        )));
    }
    adam.rates = config.learning_rates;
    scene.validate()?;
    if targets.is_empty() {
        return Err(Error::Data("fit needs at least one view".into()));
    }
    if cameras.len() != targets.len() {
        return Err(Error::Data(format!(
            "{} targets but {} cameras",
            targets.len(),
            cameras.len()
        )));
    }
    let use_lr = config.weights.lambda > 0.0;
    if use_lr && lr_images.len() != targets.len() {
        return Err(Error::Data(format!(
            "{} targets but {} LR images",
            targets.len(),
            lr_images.len()
        )));
    }
    for (i, (t, c)) in targets.iter().zip(cameras).enumerate() {
        if (t.width(), t.height()) != (c.width, c.height) || t.channels() != 3 {
            return Err(Error::Shape(format!(
                "view {i}: target {:?} does not match camera {}x{}",
                t.shape(),
                c.width,
                c.height
            )));
        }
    }
    let views: Vec<FitView<'_>> = (0..targets.len())
        .map(|i| FitView {
            camera: &cameras[i],
            target: &targets[i],
            lr: if use_lr { Some(&lr_images[i]) } else { None },
        })
        .collect();

    let settings = RenderSettings::default();
    let mut scene = scene.clone();
    scene.normalize_rotations();
    let batch = if config.batch_size == 0 {
        views.len()
    } else {
        config.batch_size.min(views.len())
    };
    let mut order: Vec<usize> = (0..views.len()).collect();
    let mut cursor = order.len();
    let mut r = rng::seeded(config.seed, &[stream::FIT_BATCH]);
    let mut losses = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let mut picked = Vec::with_capacity(batch);
        while picked.len() < batch {
            if cursor == order.len() {
                order.shuffle(&mut r);
                cursor = 0;
            }
            picked.push(order[cursor]);
            cursor += 1;
        }
        let results: Vec<Result<(LossValue, SceneGrad)>> = picked
            .par_iter()
            .map(|&v| view_loss_grad(&scene, &views[v], &config.weights, config.sr_factor, &settings))
            .collect();
        let mut grad = SceneGrad::zeros(scene.len());
        let mut loss = 0.0;
        for res in results {
            let (v, g) = res?;
            loss += v.total;
            grad.add_assign(&g);
        }
        let k = 1.0 / batch as f64;
        loss *= k;
        grad.scale(k);
        if !loss.is_finite() || !grad.max_abs().is_finite() {
            return Err(Error::Divergence {
                iteration: it,
                loss,
                dump: divergence_dump(&scene, &grad, &picked),
            });
        }
        progress(it, loss);
        losses.push(loss);
        adam.lr_scale = config.learning_rates.decay(it, config.iterations);
        adam.apply(&mut scene, &grad);
        if let Err(e) = scene.validate() {
            return Err(Error::Divergence {
                iteration: it,
                loss,
                dump: format!("{e}; {}", divergence_dump(&scene, &grad, &picked)),
            });
        }
    }
    Ok(FitReport { scene, losses })
}

fn divergence_dump(scene: &GaussianScene, grad: &SceneGrad, views: &[usize]) -> String {
    let worst = grad
        .gaussians
        .iter()
        .enumerate()
        .map(|(i, g)| (i, g.iter().fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY })))
        .max_by(|a, b| a.1.total_cmp(&b.1));
    let mut s = format!("n={} views={views:?} scene_digest={}", scene.len(), scene.digest());
    if let Some((i, m)) = worst {
        s.push_str(&format!(
            " worst_gaussian={i} grad_max={m} params={:?}",
            scene.gaussians[i].to_array()
        ));
    }
    s
}
