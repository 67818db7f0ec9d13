//! Noise predictors: an oracle that knows the clean latents up to a fixed
//! per-view hallucination, and a small trainable convolutional network.

mod net;

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::image::Latent;
use crate::rng::{self, stream};

pub use net::{
    load_checkpoint, noise_mse, save_checkpoint, train_denoiser, ConvNet, NetConfig, TrainConfig,
    TrainOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DenoiserKind {
    #[default]
    Oracle,
    Trained,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    None,
    #[default]
    LrLatent,
}

/// Serializable description of a denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSpec {
    pub kind: DenoiserKind,
    pub hallucination_strength: f64,
    /// Base seed; each view's field is derived from it and the view index.
    pub hallucination_seed: u64,
    /// Gaussian blur sigma of the hallucination field, in latent pixels.
    pub smoothness: f64,
    /// Checkpoint directory of a trained network.
    pub weights: Option<PathBuf>,
    pub conditioning: Conditioning,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        Self {
            kind: DenoiserKind::Oracle,
            hallucination_strength: 0.0,
            hallucination_seed: 0,
            smoothness: 2.0,
            weights: None,
            conditioning: Conditioning::LrLatent,
        }
    }
}

impl DenoiserSpec {
    pub fn oracle(strength: f64, seed: u64) -> Self {
        Self {
            hallucination_strength: strength,
            hallucination_seed: seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hallucination_strength >= 0.0 && self.hallucination_strength.is_finite()) {
            return Err(Error::param("hallucination_strength", "must be >= 0"));
        }
        if !(self.smoothness > 0.0) {
            return Err(Error::param("smoothness", "must be > 0"));
        }
        Ok(())
    }
}

/// Seed of view `view`'s hallucination field.
pub fn view_field_seed(base: u64, view: usize) -> u64 {
    rng::derive_seed(base, &[stream::HALLUCINATION, view as u64])
}

fn blur_periodic_axis(data: &[f64], w: usize, h: usize, kernel: &[f64], horizontal: bool) -> Vec<f64> {
    let r = kernel.len() / 2;
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let o = k as isize - r as isize;
                let (sx, sy) = if horizontal {
                    ((x as isize + o).rem_euclid(w as isize) as usize, y)
                } else {
                    (x, (y as isize + o).rem_euclid(h as isize) as usize)
                };
                acc += kv * data[sy * w + sx];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Zero-mean, unit-variance smooth random field: white Gaussian noise blurred
/// with a Gaussian of standard deviation `smoothness` (periodic borders),
/// then renormalized.
pub fn make_hallucination_field(
    shape: (usize, usize, usize),
    seed: u64,
    smoothness: f64,
) -> Result<Latent> {
    if !(smoothness > 0.0) {
        return Err(Error::param("smoothness", "must be > 0"));
    }
    let (w, h, ch) = shape;
    let r = (3.0 * smoothness).ceil() as usize;
    let kernel: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let d = i as f64 - r as f64;
            (-d * d / (2.0 * smoothness * smoothness)).exp()
        })
        .collect();
    let ks: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.into_iter().map(|v| v / ks).collect();
    let mut g = rng::seeded(seed, &[stream::HALLUCINATION]);
    let mut field = Latent::new(w, h, ch);
    for c in 0..ch {
        let noise: Vec<f64> = (0..w * h).map(|_| rng::standard_normal(&mut g)).collect();
        let bx = blur_periodic_axis(&noise, w, h, &kernel, true);
        let b = blur_periodic_axis(&bx, w, h, &kernel, false);
        for y in 0..h {
            for x in 0..w {
                field.set(x, y, c, b[y * w + x]);
            }
        }
    }
    let n = field.len() as f64;
    let mean = field.mean();
    let var = field.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    Ok(field.map(|v| (v - mean) * inv))
}

/// Denoiser that is exact up to a fixed per-view hallucination:
/// its clean estimate is always `x0 + strength * h_view`.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    pub strength: f64,
    targets: Vec<Latent>,
}

impl OracleDenoiser {
    /// `truth[i]` is view i's clean latent.
    pub fn new(truth: Vec<Latent>, strength: f64, seed: u64, smoothness: f64) -> Result<Self> {
        let targets = truth
            .into_iter()
            .enumerate()
            .map(|(i, x0)| {
                if strength == 0.0 {
                    return Ok(x0);
                }
                let h = make_hallucination_field(x0.shape(), view_field_seed(seed, i), smoothness)?;
                Ok(x0.zip_map(&h, |a, b| a + strength * b))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { strength, targets })
    }

    /// The clean latent the oracle steers view `view` towards.
    pub fn target(&self, view: usize) -> Option<&Latent> {
        self.targets.get(view)
    }
}

#[derive(Debug, Clone)]
pub enum Denoiser {
    Oracle(OracleDenoiser),
    Trained(Arc<ConvNet>),
}

impl Denoiser {
    /// Builds a denoiser from its spec. The oracle needs the per-view clean
    /// latents in `truth`.
    pub fn from_spec(spec: &DenoiserSpec, truth: Option<Vec<Latent>>) -> Result<Self> {
        spec.validate()?;
        match spec.kind {
            DenoiserKind::Oracle => {
                let truth = truth.ok_or_else(|| {
                    Error::Config("the oracle denoiser needs ground-truth clean latents".into())
                })?;
                Ok(Denoiser::Oracle(OracleDenoiser::new(
                    truth,
                    spec.hallucination_strength,
                    spec.hallucination_seed,
                    spec.smoothness,
                )?))
            }
            DenoiserKind::Trained => {
                let path = spec.weights.as_ref().ok_or_else(|| {
                    Error::Config("a trained denoiser needs a weights path".into())
                })?;
                let net = load_checkpoint(path)?;
                if net.config().conditioning != spec.conditioning {
                    return Err(Error::Config(
                        "checkpoint conditioning does not match the denoiser spec".into(),
                    ));
                }
                Ok(Denoiser::Trained(Arc::new(net)))
            }
        }
    }

    /// Noise prediction for view `view` at step `t`, conditioned on the
    /// view's LR latent.
    pub fn predict_noise(
        &self,
        x_t: &Latent,
        t: usize,
        condition: &Latent,
        view: usize,
        schedule: &NoiseSchedule,
    ) -> Result<Latent> {
        match self {
            Denoiser::Oracle(o) => {
                let x0 = o.target(view).ok_or_else(|| {
                    Error::Config(format!("no ground-truth latent for view {view}"))
                })?;
                x_t.ensure_same_shape(x0, "oracle latent")?;
                if !(1..=schedule.steps()).contains(&t) {
                    return Err(Error::param("t", format!("{t} is outside 1..={}", schedule.steps())));
                }
                let ab = schedule.alpha_bar(t);
                let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
                if b <= 0.0 {
                    return Err(Error::DegenerateSchedule { t, alpha_bar: ab });
                }
                Ok(x_t.zip_map(x0, |x, c| (x - a * c) / b))
            }
            Denoiser::Trained(net) => net.predict(x_t, t, condition, schedule),
        }
    }
}
