//! A small convolutional noise predictor with a hand-written backward pass.
//!
//! Layout (F = width):
//! `in -> conv3x3(F) + time bias -> relu -> conv3x3(F) -> relu = skip`
//! `skip -> avgpool2 -> conv3x3(2F) -> relu -> upsample2`
//! `[skip, up] -> conv3x3(F) -> relu -> conv1x1(channels)`.

use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Conditioning;
use crate::data::ViewSet;
use crate::diffusion::{forward_diffuse, NoiseSchedule};
use crate::error::{Error, Result};
use crate::image::{Image, Latent};
use crate::rng::{self, stream, Rng};

const TIME_FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub width: usize,
    pub channels: usize,
    pub conditioning: Conditioning,
    /// Step count of the schedule the network was trained for.
    pub steps: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            width: 8,
            channels: 3,
            conditioning: Conditioning::LrLatent,
            steps: 4,
        }
    }
}

impl NetConfig {
    pub fn input_channels(&self) -> usize {
        match self.conditioning {
            Conditioning::None => self.channels,
            Conditioning::LrLatent => 2 * self.channels,
        }
    }

    /// Stable identifier of the layer shapes.
    pub fn architecture_hash(&self) -> String {
        let desc = format!(
            "unet-lite/v1 in={} width={} out={} time={TIME_FEATURES}",
            self.input_channels(),
            self.width,
            self.channels
        );
        hex::encode(Sha256::digest(desc.as_bytes()))
    }
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    cin: usize,
    cout: usize,
    k: usize,
    w: usize,
    b: usize,
}

impl Layer {
    fn weights(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    a: Layer,
    time: usize,
    b: Layer,
    c: Layer,
    d: Layer,
    e: Layer,
    total: usize,
}

impl Layout {
    fn new(cfg: &NetConfig) -> Self {
        let f = cfg.width;
        let mut off = 0;
        let mut layer = |cin, cout, k| {
            let w = off;
            off += cout * cin * k * k;
            let b = off;
            off += cout;
            Layer { cin, cout, k, w, b }
        };
        let a = layer(cfg.input_channels(), f, 3);
        let b = layer(f, f, 3);
        let c = layer(f, 2 * f, 3);
        let d = layer(3 * f, f, 3);
        let e = layer(f, cfg.channels, 1);
        let time = off;
        off += f * TIME_FEATURES;
        Self {
            a,
            time,
            b,
            c,
            d,
            e,
            total: off,
        }
    }
}

/// Planar `channels x height x width` activations.
#[derive(Debug, Clone)]
struct Tensor {
    c: usize,
    h: usize,
    w: usize,
    d: Vec<f64>,
}

impl Tensor {
    fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            d: vec![0.0; c * h * w],
        }
    }

    fn plane(&self, c: usize) -> &[f64] {
        &self.d[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.h * self.w;
        &mut self.d[c * n..(c + 1) * n]
    }

    fn from_image(img: &Image) -> Self {
        let (w, h, c) = img.shape();
        let mut t = Self::zeros(c, h, w);
        for y in 0..h {
            for x in 0..w {
                for k in 0..c {
                    t.d[(k * h + y) * w + x] = img.get(x, y, k);
                }
            }
        }
        t
    }

    fn to_image(&self) -> Image {
        Image::from_fn(self.w, self.h, self.c, |x, y, k| self.d[(k * self.h + y) * self.w + x])
    }

    fn concat(a: &Tensor, b: &Tensor) -> Tensor {
        let mut d = a.d.clone();
        d.extend_from_slice(&b.d);
        Tensor {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            d,
        }
    }

    fn relu(mut self) -> Self {
        for v in &mut self.d {
            *v = v.max(0.0);
        }
        self
    }
}

fn conv_forward(x: &Tensor, l: &Layer, p: &[f64]) -> Tensor {
    let (h, w) = (x.h, x.w);
    let r = (l.k / 2) as isize;
    let mut out = Tensor::zeros(l.cout, h, w);
    for co in 0..l.cout {
        let bias = p[l.b + co];
        let o = out.plane_mut(co);
        o.fill(bias);
        for ci in 0..l.cin {
            let inp = x.plane(ci);
            for ky in 0..l.k {
                for kx in 0..l.k {
                    let wv = p[l.w + ((co * l.cin + ci) * l.k + ky) * l.k + kx];
                    let (dy, dx) = (ky as isize - r, kx as isize - r);
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy).min(h as isize) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let orow = &mut o[y * w + x0..y * w + x1];
                        let irow = &inp[sy * w + (x0 as isize + dx) as usize..sy * w + (x1 as isize + dx) as usize];
                        for (ov, iv) in orow.iter_mut().zip(irow) {
                            *ov += wv * iv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates parameter gradients into `gp` and returns the input gradient.
fn conv_backward(x: &Tensor, l: &Layer, p: &[f64], g: &Tensor, gp: &mut [f64]) -> Tensor {
    let (h, w) = (x.h, x.w);
    let r = (l.k / 2) as isize;
    let mut gx = Tensor::zeros(l.cin, h, w);
    for co in 0..l.cout {
        let go = g.plane(co);
        gp[l.b + co] += go.iter().sum::<f64>();
        for ci in 0..l.cin {
            let inp = x.plane(ci);
            let n = h * w;
            for ky in 0..l.k {
                for kx in 0..l.k {
                    let wi = l.w + ((co * l.cin + ci) * l.k + ky) * l.k + kx;
                    let wv = p[wi];
                    let (dy, dx) = (ky as isize - r, kx as isize - r);
                    let y0 = (-dy).max(0) as usize;
                    let y1 = (h as isize - dy).min(h as isize) as usize;
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize) as usize;
                    let mut gw = 0.0;
                    let gxp = &mut gx.d[ci * n..(ci + 1) * n];
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s0 = sy * w + (x0 as isize + dx) as usize;
                        let grow = &go[y * w + x0..y * w + x1];
                        let irow = &inp[s0..s0 + (x1 - x0)];
                        for (gv, iv) in grow.iter().zip(irow) {
                            gw += gv * iv;
                        }
                        let xrow = &mut gxp[s0..s0 + (x1 - x0)];
                        for (xv, gv) in xrow.iter_mut().zip(grow) {
                            *xv += wv * gv;
                        }
                    }
                    gp[wi] += gw;
                }
            }
        }
    }
    gx
}

fn avgpool2(x: &Tensor) -> Tensor {
    let (h, w) = (x.h / 2, x.w / 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                let i = |dy: usize, dx: usize| x.d[(c * x.h + 2 * y + dy) * x.w + 2 * xx + dx];
                out.d[(c * h + y) * w + xx] = 0.25 * (i(0, 0) + i(0, 1) + i(1, 0) + i(1, 1));
            }
        }
    }
    out
}

fn avgpool2_backward(g: &Tensor, h: usize, w: usize) -> Tensor {
    let mut out = Tensor::zeros(g.c, h, w);
    for c in 0..g.c {
        for y in 0..h {
            for x in 0..w {
                out.d[(c * h + y) * w + x] = 0.25 * g.d[(c * g.h + y / 2) * g.w + x / 2];
            }
        }
    }
    out
}

fn upsample2(x: &Tensor) -> Tensor {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        for y in 0..h {
            for xx in 0..w {
                out.d[(c * h + y) * w + xx] = x.d[(c * x.h + y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

fn upsample2_backward(g: &Tensor) -> Tensor {
    let (h, w) = (g.h / 2, g.w / 2);
    let mut out = Tensor::zeros(g.c, h, w);
    for c in 0..g.c {
        for y in 0..g.h {
            for x in 0..g.w {
                out.d[(c * h + y / 2) * w + x / 2] += g.d[(c * g.h + y) * g.w + x];
            }
        }
    }
    out
}

fn relu_mask(g: &mut Tensor, act: &Tensor) {
    for (gv, a) in g.d.iter_mut().zip(&act.d) {
        if *a <= 0.0 {
            *gv = 0.0;
        }
    }
}

struct Cache {
    input: Tensor,
    a1: Tensor,
    a2: Tensor,
    pooled: Tensor,
    a3: Tensor,
    cat: Tensor,
    a4: Tensor,
    feats: [f64; TIME_FEATURES],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNet {
    config: NetConfig,
    params: Vec<f64>,
}

impl ConvNet {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        if config.width == 0 || config.channels == 0 || config.steps == 0 {
            return Err(Error::param("net", "width, channels and steps must be positive"));
        }
        let lay = Layout::new(&config);
        let mut params = vec![0.0; lay.total];
        let mut r = rng::seeded(seed, &[stream::TRAINING, 1]);
        for (l, gain) in [(lay.a, 1.0), (lay.b, 1.0), (lay.c, 1.0), (lay.d, 1.0), (lay.e, 0.1)] {
            let std = gain * (2.0 / (l.cin * l.k * l.k) as f64).sqrt();
            for v in &mut params[l.w..l.w + l.weights()] {
                *v = std * rng::standard_normal(&mut r);
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// SHA-256 of the little-endian weights.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.params {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn time_features(t: usize, schedule: &NoiseSchedule) -> [f64; TIME_FEATURES] {
        let ab = schedule.alpha_bar(t);
        [ab.sqrt(), (1.0 - ab).sqrt(), t as f64 / schedule.steps() as f64, 1.0]
    }

    fn assemble_input(&self, x_t: &Latent, condition: &Latent) -> Result<Tensor> {
        let (w, h, c) = x_t.shape();
        if c != self.config.channels {
            return Err(Error::Shape(format!(
                "latent has {c} channels, network expects {}",
                self.config.channels
            )));
        }
        if w % 2 != 0 || h % 2 != 0 {
            return Err(Error::Shape(format!("latent size {w}x{h} must be even")));
        }
        let x = Tensor::from_image(x_t);
        Ok(match self.config.conditioning {
            Conditioning::None => x,
            Conditioning::LrLatent => {
                if condition.channels() != c {
                    return Err(Error::Shape(format!(
                        "condition has {} channels, expected {c}",
                        condition.channels()
                    )));
                }
                let cond = if (condition.width(), condition.height()) == (w, h) {
                    condition.clone()
                } else {
                    condition.resize_bilinear(w, h)
                };
                Tensor::concat(&x, &Tensor::from_image(&cond))
            }
        })
    }

    fn forward(&self, input: Tensor, feats: [f64; TIME_FEATURES]) -> (Tensor, Cache) {
        let lay = Layout::new(&self.config);
        let p = &self.params;
        let mut a1 = conv_forward(&input, &lay.a, p);
        for co in 0..lay.a.cout {
            let tb: f64 = (0..TIME_FEATURES)
                .map(|k| p[lay.time + co * TIME_FEATURES + k] * feats[k])
                .sum();
            for v in a1.plane_mut(co) {
                *v += tb;
            }
        }
        let a1 = a1.relu();
        let a2 = conv_forward(&a1, &lay.b, p).relu();
        let pooled = avgpool2(&a2);
        let a3 = conv_forward(&pooled, &lay.c, p).relu();
        let cat = Tensor::concat(&a2, &upsample2(&a3));
        let a4 = conv_forward(&cat, &lay.d, p).relu();
        let out = conv_forward(&a4, &lay.e, p);
        (
            out,
            Cache {
                input,
                a1,
                a2,
                pooled,
                a3,
                cat,
                a4,
                feats,
            },
        )
    }

    fn backward(&self, cache: &Cache, g_out: &Tensor, gp: &mut [f64]) {
        let lay = Layout::new(&self.config);
        let p = &self.params;
        let mut g4 = conv_backward(&cache.a4, &lay.e, p, g_out, gp);
        relu_mask(&mut g4, &cache.a4);
        let g_cat = conv_backward(&cache.cat, &lay.d, p, &g4, gp);
        let f = self.config.width;
        let n = cache.a2.h * cache.a2.w;
        let mut g2 = Tensor {
            c: f,
            h: cache.a2.h,
            w: cache.a2.w,
            d: g_cat.d[..f * n].to_vec(),
        };
        let g_up = Tensor {
            c: 2 * f,
            h: cache.a2.h,
            w: cache.a2.w,
            d: g_cat.d[f * n..].to_vec(),
        };
        let mut g3 = upsample2_backward(&g_up);
        relu_mask(&mut g3, &cache.a3);
        let g_pool = conv_backward(&cache.pooled, &lay.c, p, &g3, gp);
        let back = avgpool2_backward(&g_pool, cache.a2.h, cache.a2.w);
        for (a, b) in g2.d.iter_mut().zip(&back.d) {
            *a += b;
        }
        relu_mask(&mut g2, &cache.a2);
        let mut g1 = conv_backward(&cache.a1, &lay.b, p, &g2, gp);
        relu_mask(&mut g1, &cache.a1);
        for co in 0..lay.a.cout {
            let s: f64 = g1.plane(co).iter().sum();
            for k in 0..TIME_FEATURES {
                gp[lay.time + co * TIME_FEATURES + k] += s * cache.feats[k];
            }
        }
        conv_backward(&cache.input, &lay.a, p, &g1, gp);
    }

    /// Noise prediction for `x_t` at step `t` given the LR conditioning latent.
    pub fn predict(&self, x_t: &Latent, t: usize, condition: &Latent, schedule: &NoiseSchedule) -> Result<Latent> {
        if !(1..=schedule.steps()).contains(&t) {
            return Err(Error::param("t", format!("{t} is outside 1..={}", schedule.steps())));
        }
        if schedule.steps() != self.config.steps {
            return Err(Error::Config(format!(
                "network was trained for {} steps, schedule has {}",
                self.config.steps,
                schedule.steps()
            )));
        }
        let input = self.assemble_input(x_t, condition)?;
        let (out, _) = self.forward(input, Self::time_features(t, schedule));
        Ok(out.to_image())
    }

    /// Mean squared error against `eps` and its parameter gradient.
    fn loss_grad(
        &self,
        x_t: &Latent,
        t: usize,
        condition: &Latent,
        eps: &Latent,
        schedule: &NoiseSchedule,
        gp: &mut [f64],
    ) -> Result<f64> {
        let input = self.assemble_input(x_t, condition)?;
        let (out, cache) = self.forward(input, Self::time_features(t, schedule));
        let target = Tensor::from_image(eps);
        let n = out.d.len() as f64;
        let mut g = out.clone();
        let mut loss = 0.0;
        for (gv, (o, e)) in g.d.iter_mut().zip(out.d.iter().zip(&target.d)) {
            let d = o - e;
            loss += d * d;
            *gv = 2.0 * d / n;
        }
        self.backward(&cache, &g, gp);
        Ok(loss / n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// Side of the square HR crops, in pixels.
    pub crop: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub net: NetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 4,
            crop: 16,
            learning_rate: 2e-3,
            seed: 0,
            net: NetConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ConvNet,
    /// Mean batch loss per step.
    pub losses: Vec<f64>,
}

/// One training example: a clean crop, its conditioning and a noise level.
struct Sample {
    x0: Image,
    condition: Image,
    t: usize,
    eps: Image,
}

fn crop(img: &Image, x0: usize, y0: usize, size: usize) -> Image {
    Image::from_fn(size, size, img.channels(), |x, y, c| img.get(x0 + x, y0 + y, c))
}

fn draw_sample(
    corpus: &[ViewSet],
    pool: &[(usize, usize)],
    size: usize,
    schedule: &NoiseSchedule,
    r: &mut Rng,
) -> Sample {
    let (s, v) = pool[r.random_range(0..pool.len())];
    let set = &corpus[s];
    let f = set.sr_factor;
    let hr = set.views[v].hr.as_ref().expect("pool holds views with HR");
    let lr = &set.views[v].lr;
    let cx = r.random_range(0..=(hr.width() - size) / f) * f;
    let cy = r.random_range(0..=(hr.height() - size) / f) * f;
    let x0 = crop(hr, cx, cy, size);
    let condition = crop(lr, cx / f, cy / f, size / f);
    let t = r.random_range(1..=schedule.steps());
    let eps = rng::normal_image(size, size, hr.channels(), r);
    Sample { x0, condition, t, eps }
}

fn sample_pool(corpus: &[ViewSet], size: usize) -> Result<Vec<(usize, usize)>> {
    let mut pool = Vec::new();
    for (s, set) in corpus.iter().enumerate() {
        for (v, view) in set.views.iter().enumerate() {
            if let Some(hr) = &view.hr {
                if hr.width() >= size && hr.height() >= size && size.is_multiple_of(set.sr_factor) {
                    pool.push((s, v));
                }
            }
        }
    }
    if pool.is_empty() {
        return Err(Error::Data(
            "training corpus has no HR views large enough for the crop size".into(),
        ));
    }
    Ok(pool)
}

/// Trains a conditional noise predictor on random HR crops of `corpus`.
pub fn train_denoiser(
    corpus: &[ViewSet],
    schedule: &NoiseSchedule,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if config.steps == 0 {
        return Err(Error::param("steps", "must be at least 1"));
    }
    if config.batch == 0 || config.crop < 2 || !config.crop.is_multiple_of(2) {
        return Err(Error::param("crop", "batch must be positive and crop a positive even size"));
    }
    if corpus.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    let pool = sample_pool(corpus, config.crop)?;
    let net_cfg = NetConfig {
        steps: schedule.steps(),
        ..config.net
    };
    let mut net = ConvNet::new(net_cfg, config.seed)?;
    let n = net.params.len();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (b1, b2, eps_adam) = (0.9f64, 0.999f64, 1e-8);
    let mut r = rng::seeded(config.seed, &[stream::TRAINING, 2]);
    let mut losses = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        let mut gp = vec![0.0; n];
        let mut loss = 0.0;
        for _ in 0..config.batch {
            let s = draw_sample(corpus, &pool, config.crop, schedule, &mut r);
            let x_t = forward_diffuse(&s.x0, s.t, &s.eps, schedule)?;
            loss += net.loss_grad(&x_t, s.t, &s.condition, &s.eps, schedule, &mut gp)?;
        }
        let k = 1.0 / config.batch as f64;
        loss *= k;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                iteration: step,
                loss,
                dump: format!("denoiser training, weights digest {}", net.digest()),
            });
        }
        log::debug!("denoiser step {step}: loss {loss:.5}");
        losses.push(loss);
        let (c1, c2) = (1.0 - b1.powi(step as i32), 1.0 - b2.powi(step as i32));
        for i in 0..n {
            let g = gp[i] * k;
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            net.params[i] -= config.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps_adam);
        }
    }
    Ok(TrainOutcome { net, losses })
}

/// Noise-prediction MSE of `net` and of the all-zero predictor on `samples`
/// random crops of `corpus`.
pub fn noise_mse(
    net: &ConvNet,
    corpus: &[ViewSet],
    schedule: &NoiseSchedule,
    crop_size: usize,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let pool = sample_pool(corpus, crop_size)?;
    let mut r = rng::seeded(seed, &[stream::TRAINING, 3]);
    let (mut ours, mut zero) = (0.0, 0.0);
    for _ in 0..samples {
        let s = draw_sample(corpus, &pool, crop_size, schedule, &mut r);
        let x_t = forward_diffuse(&s.x0, s.t, &s.eps, schedule)?;
        let pred = net.predict(&x_t, s.t, &s.condition, schedule)?;
        ours += pred.mse(&s.eps)?;
        zero += s.eps.data().iter().map(|e| e * e).sum::<f64>() / s.eps.len() as f64;
    }
    Ok((ours / samples as f64, zero / samples as f64))
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    architecture_hash: String,
    config: NetConfig,
    parameters: usize,
    digest: String,
}

const WEIGHTS_FILE: &str = "weights.bin";
const META_FILE: &str = "denoiser.json";

/// Writes `weights.bin` (little-endian f64) and `denoiser.json` into `dir`.
pub fn save_checkpoint(net: &ConvNet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes: Vec<u8> = net.params.iter().flat_map(|v| v.to_le_bytes()).collect();
    let wp = dir.join(WEIGHTS_FILE);
    fs::write(&wp, bytes).map_err(|e| Error::io(&wp, e))?;
    let meta = CheckpointMeta {
        architecture_hash: net.config.architecture_hash(),
        config: net.config,
        parameters: net.params.len(),
        digest: net.digest(),
    };
    let mp = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    fs::write(&mp, text + "\n").map_err(|e| Error::io(&mp, e))
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<ConvNet> {
    let dir = dir.as_ref();
    let mp = dir.join(META_FILE);
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: mp.clone(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    if meta.architecture_hash != meta.config.architecture_hash() {
        return Err(Error::Data(format!("{}: architecture hash mismatch", mp.display())));
    }
    let wp = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&wp).map_err(|e| Error::io(&wp, e))?;
    let expected = Layout::new(&meta.config).total;
    if bytes.len() != expected * 8 || meta.parameters != expected {
        return Err(Error::Data(format!(
            "{}: expected {expected} parameters, found {} bytes",
            wp.display(),
            bytes.len()
        )));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let net = ConvNet {
        config: meta.config,
        params,
    };
    if net.digest() != meta.digest {
        return Err(Error::Data(format!("{}: weights digest mismatch", wp.display())));
    }
    Ok(net)
}
