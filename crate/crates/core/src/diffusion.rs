//! Noise schedules and DDIM-family sampler algebra.
//!
//! Timesteps run `1..=T`; `alpha_bar(0)` is defined as 1 so the final step of
//! a trajectory returns its clean reference unchanged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Latent};
use crate::rng::{self, Rng};

/// Below this cumulative signal level `x0` can no longer be recovered.
pub const ALPHA_BAR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    sigmas: Vec<f64>,
    eta: f64,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit per-step betas (index 0 is t = 1).
    pub fn from_betas(betas: Vec<f64>, eta: f64) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::param("T", "need at least one step"));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::param("eta", format!("{eta} is outside [0, 1]")));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::param("betas", format!("{b} is outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let mut sched = Self {
            betas,
            alphas,
            alpha_bars,
            sigmas: Vec::new(),
            eta,
        };
        sched.sigmas = (1..=sched.steps())
            .map(|t| {
                let ab = sched.alpha_bar(t);
                let ab_prev = sched.alpha_bar(t - 1);
                if eta == 0.0 || ab >= 1.0 {
                    0.0
                } else {
                    eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt()
                }
            })
            .collect();
        for t in 1..=sched.steps() {
            if sched.eta_coefficient_sq(t) < -1e-15 {
                return Err(Error::Schedule(format!(
                    "1 - alpha_bar[{}] - sigma[{t}]^2 is negative",
                    t - 1
                )));
            }
        }
        Ok(sched)
    }

    /// Linear betas from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64, eta: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("T", "must be >= 1"));
        }
        if !(beta_start > 0.0) {
            return Err(Error::param("beta_start", format!("{beta_start} must be > 0")));
        }
        if beta_end < beta_start {
            return Err(Error::param(
                "beta_end",
                format!("{beta_end} is below beta_start {beta_start}"),
            ));
        }
        if !(beta_end < 1.0) {
            return Err(Error::param("beta_end", format!("{beta_end} must be < 1")));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas, eta)
    }

    /// A 1000-step linear schedule (1e-4 to 0.02) sampled at `steps` evenly
    /// strided timesteps, the usual way few-step samplers reuse a long schedule.
    pub fn strided(steps: usize, eta: f64) -> Result<Self> {
        const TRAIN_STEPS: usize = 1000;
        if steps == 0 || steps > TRAIN_STEPS {
            return Err(Error::param("T", format!("{steps} is outside 1..=1000")));
        }
        let mut bars = Vec::with_capacity(TRAIN_STEPS);
        let mut acc = 1.0;
        for i in 0..TRAIN_STEPS {
            acc *= 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / (TRAIN_STEPS - 1) as f64);
            bars.push(acc);
        }
        let mut prev = 1.0;
        let betas = (1..=steps)
            .map(|k| {
                let ab = bars[k * TRAIN_STEPS / steps - 1];
                let beta = 1.0 - ab / prev;
                prev = ab;
                beta
            })
            .collect();
        Self::from_betas(betas, eta)
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    #[inline]
    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    #[inline]
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product up to `t`, with `alpha_bar(0) = 1`.
    #[inline]
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    #[inline]
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }

    /// `1 - alpha_bar(t-1) - sigma(t)^2`, the squared weight of the predicted noise.
    #[inline]
    pub fn eta_coefficient_sq(&self, t: usize) -> f64 {
        1.0 - self.alpha_bar(t - 1) - self.sigma(t).powi(2)
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::param(
                "t",
                format!("{t} is outside 1..={}", self.steps()),
            ));
        }
        Ok(())
    }
}

/// Linear-beta schedule; see [`NoiseSchedule::linear`].
pub fn make_linear_schedule(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
    eta: f64,
) -> Result<NoiseSchedule> {
    NoiseSchedule::linear(steps, beta_start, beta_end, eta)
}

/// `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_diffuse(x0: &Latent, t: usize, eps: &Latent, s: &NoiseSchedule) -> Result<Latent> {
    s.check_t(t)?;
    x0.ensure_same_shape(eps, "forward_diffuse noise")?;
    let ab = s.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.zip_map(eps, |x, e| a * x + b * e))
}

/// One-shot clean estimate `(x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)`.
pub fn estimate_x0(x_t: &Latent, eps_pred: &Latent, t: usize, s: &NoiseSchedule) -> Result<Latent> {
    s.check_t(t)?;
    x_t.ensure_same_shape(eps_pred, "estimate_x0 noise")?;
    let ab = s.alpha_bar(t);
    if ab <= ALPHA_BAR_FLOOR {
        return Err(Error::DegenerateSchedule { t, alpha_bar: ab });
    }
    let (inv, b) = (1.0 / ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x_t.zip_map(eps_pred, |x, e| (x - b * e) * inv))
}

/// Mean of the ancestral reverse step, `(x_t - (1 - alpha_t) eps) / sqrt(alpha_t)`.
pub fn posterior_mean(x_t: &Latent, eps_pred: &Latent, t: usize, s: &NoiseSchedule) -> Result<Latent> {
    s.check_t(t)?;
    x_t.ensure_same_shape(eps_pred, "posterior_mean noise")?;
    let a = s.alpha(t);
    let inv = 1.0 / a.sqrt();
    Ok(x_t.zip_map(eps_pred, |x, e| (x - (1.0 - a) * e) * inv))
}

/// Ancestral step: posterior mean plus `sigma_t z`.
pub fn ancestral_step(
    x_t: &Latent,
    eps_pred: &Latent,
    t: usize,
    s: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Latent> {
    let mut mean = posterior_mean(x_t, eps_pred, t, s)?;
    let sigma = s.sigma(t);
    if sigma > 0.0 {
        for v in mean.data_mut() {
            *v += sigma * rng::standard_normal(rng);
        }
    }
    Ok(mean)
}

/// Reference-guided denoising step:
/// `x_{t-1} = sqrt(abar_{t-1}) x0_ref + eta_t eps_pred + sigma_t e`,
/// `eta_t = sqrt(1 - abar_{t-1} - sigma_t^2)`.
///
/// `x0_ref` may be the model's own clean estimate (plain DDIM) or any other
/// clean-latent reference, e.g. the re-encoded render of a fitted scene.
pub fn guided_denoise_step(
    x_t: &Latent,
    x0_ref: &Latent,
    eps_pred: &Latent,
    t: usize,
    s: &NoiseSchedule,
    rng: &mut Rng,
) -> Result<Latent> {
    s.check_t(t)?;
    x_t.ensure_same_shape(x0_ref, "guided_denoise_step reference")?;
    x_t.ensure_same_shape(eps_pred, "guided_denoise_step noise")?;
    let eta_sq = s.eta_coefficient_sq(t);
    if eta_sq < -1e-15 {
        return Err(Error::Schedule(format!(
            "noise weight squared {eta_sq} < 0 at t={t}"
        )));
    }
    let eta_t = eta_sq.max(0.0).sqrt();
    let a = s.alpha_bar(t - 1).sqrt();
    let sigma = s.sigma(t);
    let mut out = x0_ref.zip_map(eps_pred, |x0, e| a * x0 + eta_t * e);
    if sigma > 0.0 {
        for v in out.data_mut() {
            *v += sigma * rng::standard_normal(rng);
        }
    }
    Ok(out)
}

/// Per-view sampler state: all views share one timestep.
#[derive(Debug, Clone)]
pub struct LatentState {
    pub latents: Vec<Latent>,
    pub conditions: Vec<Latent>,
    pub t: usize,
    pub seed: u64,
}

impl LatentState {
    /// Draws `x_T` independently per view from `seed`.
    pub fn init(
        conditions: Vec<Latent>,
        latent_shape: (usize, usize, usize),
        steps: usize,
        seed: u64,
    ) -> Self {
        let (w, h, c) = latent_shape;
        let latents = (0..conditions.len())
            .map(|i| {
                let mut r = rng::seeded(seed, &[rng::stream::INIT_LATENT, i as u64]);
                rng::normal_image(w, h, c, &mut r)
            })
            .collect();
        Self {
            latents,
            conditions,
            t: steps,
            seed,
        }
    }

    pub fn views(&self) -> usize {
        self.latents.len()
    }

    /// Generator for the stochastic part of view `view`'s step at `t`.
    pub fn step_rng(&self, view: usize) -> Rng {
        rng::seeded(
            self.seed,
            &[rng::stream::STEP_NOISE, view as u64, self.t as u64],
        )
    }
}

/// Convenience for tests and benches: a latent of the given shape from `rng`.
pub fn sample_noise(shape: (usize, usize, usize), r: &mut Rng) -> Image {
    rng::normal_image(shape.0, shape.1, shape.2, r)
}
