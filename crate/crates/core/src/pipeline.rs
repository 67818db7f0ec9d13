//! End-to-end runs: LR pretraining, the interleaved sampling and scene
//! fitting loop, and the per-view and bicubic baselines.
//!
//! Run directory layout:
//! `config.json`, `manifest.json`, `step_{t}/view_{i}_{H|R}.{png,bin}`,
//! `outputs/view_{i}.{png,bin}`, `final/view_{i}.png`, `scene_final.ckpt`,
//! and `metrics.json` once evaluated.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::{decode, encode, CodecSpec};
use crate::data::ViewSet;
use crate::denoiser::{Denoiser, DenoiserSpec};
use crate::diffusion::{estimate_x0, guided_denoise_step, LatentState, NoiseSchedule};
use crate::error::{Error, Result};
use crate::image::{Image, Latent};
use crate::metrics::{cross_view_consistency, ConsistencyConfig, ConsistencyMatrix, MetricsReport};
use crate::rng::{self, stream};
use crate::scene::checkpoint::save_scene;
use crate::scene::{
    fit, fit_resume, init_scene_from_views, render, Adam, Camera, FitConfig, FitReport, GaussianScene, LearningRates,
    LossWeights,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum ScheduleConfig {
    /// Every (1000/T)-th step of the standard 1000-step linear schedule.
    #[default]
    Strided,
    Linear { beta_start: f64, beta_end: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Diffusion steps T.
    pub steps: usize,
    pub fit_iterations_per_step: usize,
    pub pretrain_iterations: usize,
    pub lambda: f64,
    pub delta: f64,
    pub eta: f64,
    /// Weight of the upsampled LR conditioning in the decoder blend.
    pub faithfulness: f64,
    pub seed: u64,
    pub sr_factor: usize,
    pub n_gaussians: usize,
    /// Views per fitting step; 0 uses every view.
    pub batch_size: usize,
    pub learning_rates: LearningRates,
    pub schedule: ScheduleConfig,
    pub codec: CodecSpec,
    pub denoiser: DenoiserSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            steps: 4,
            fit_iterations_per_step: 500,
            pretrain_iterations: 3000,
            lambda: 1.0,
            delta: 0.2,
            eta: 0.0,
            faithfulness: 0.2,
            seed: 0,
            sr_factor: 2,
            n_gaussians: 300,
            batch_size: 4,
            learning_rates: LearningRates::default(),
            schedule: ScheduleConfig::default(),
            codec: CodecSpec::identity(),
            denoiser: DenoiserSpec::default(),
        }
    }
}

impl PipelineConfig {
    fn validate_with(&self, allowed_factors: &[usize]) -> Result<()> {
        for (name, v) in [
            ("steps", self.steps),
            ("fit_iterations_per_step", self.fit_iterations_per_step),
            ("pretrain_iterations", self.pretrain_iterations),
            ("n_gaussians", self.n_gaussians),
        ] {
            if v == 0 {
                return Err(Error::param(name, "must be at least 1"));
            }
        }
        if !allowed_factors.contains(&self.sr_factor) {
            return Err(Error::param(
                "sr_factor",
                format!("{} is not one of {allowed_factors:?}", self.sr_factor),
            ));
        }
        if !(0.0..=1.0).contains(&self.faithfulness) {
            return Err(Error::param("faithfulness", "must be within [0, 1]"));
        }
        self.fit_config(1, 0).validate()?;
        self.codec.validate()?;
        self.denoiser.validate()?;
        self.schedule()?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(&[2, 4])
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        match self.schedule {
            ScheduleConfig::Strided => NoiseSchedule::strided(self.steps, self.eta),
            ScheduleConfig::Linear { beta_start, beta_end } => {
                NoiseSchedule::linear(self.steps, beta_start, beta_end, self.eta)
            }
        }
    }

    /// Fit settings for one stage; `tag` separates the minibatch streams.
    pub fn fit_config(&self, iterations: usize, tag: u64) -> FitConfig {
        FitConfig {
            iterations,
            learning_rates: self.learning_rates,
            weights: LossWeights {
                lambda: self.lambda,
                delta: self.delta,
            },
            sr_factor: self.sr_factor,
            seed: rng::derive_seed(self.seed, &[stream::FIT_BATCH, tag]),
            batch_size: self.batch_size,
        }
    }

    fn latent_seed(&self) -> u64 {
        rng::derive_seed(self.seed, &[stream::INIT_LATENT])
    }

    fn init_seed(&self) -> u64 {
        rng::derive_seed(self.seed, &[stream::SCENE_INIT])
    }

    /// The denoiser spec with its hallucination seed tied to the run seed.
    pub fn effective_denoiser(&self) -> DenoiserSpec {
        DenoiserSpec {
            hallucination_seed: rng::derive_seed(
                self.seed,
                &[stream::HALLUCINATION, self.denoiser.hallucination_seed],
            ),
            ..self.denoiser.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Pretrain,
    ThreeDsr,
    PerView,
    Bicubic,
}

impl RunKind {
    pub fn label(self) -> &'static str {
        match self {
            RunKind::Pretrain => "pretrain_lr",
            RunKind::ThreeDsr => "3dsr",
            RunKind::PerView => "perview_baseline",
            RunKind::Bicubic => "bicubic_baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// Per-view decoded outputs and scene renders, relative to the run dir.
    pub outputs: Vec<String>,
    pub renders: Vec<String>,
    /// PSNR of each render against that view's decoded output.
    pub psnr_render_vs_output: Vec<f64>,
    /// PSNR of each render against HR ground truth, when available.
    pub psnr_render_vs_truth: Vec<Option<f64>>,
    pub fit_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub kind: RunKind,
    pub config: PipelineConfig,
    pub dataset: Option<String>,
    pub dataset_digest: String,
    pub views: Vec<usize>,
    pub steps: Vec<StepRecord>,
    pub final_scene: Option<String>,
    pub scene_digest: Option<String>,
    pub outputs: Vec<String>,
    pub timings: Vec<StageTiming>,
    pub status: String,
}

impl RunManifest {
    fn new(kind: RunKind, config: &PipelineConfig, views: &ViewSet, train: &[usize], ctx: &RunContext) -> Self {
        Self {
            kind,
            config: config.clone(),
            dataset: ctx.dataset.as_ref().map(|p| p.display().to_string()),
            dataset_digest: views.digest(),
            views: train.to_vec(),
            steps: Vec::new(),
            final_scene: None,
            scene_digest: None,
            outputs: Vec::new(),
            timings: Vec::new(),
            status: "running".into(),
        }
    }

    /// The manifest with wall-clock timings removed, for reproducibility checks.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: Vec::new(),
            ..self.clone()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })
    }
}

/// Where a run writes its artifacts and what it may reuse.
#[derive(Debug, Clone, Default)]
pub struct RunContext {
    pub out_dir: Option<PathBuf>,
    /// A scene already fitted to the LR views; pretraining runs otherwise.
    pub theta_lr: Option<GaussianScene>,
    /// Dataset location recorded in the manifest.
    pub dataset: Option<PathBuf>,
}

impl RunContext {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: Some(dir.into()),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scene: GaussianScene,
    pub manifest: RunManifest,
    /// Training view indices, in the order of `outputs`.
    pub views: Vec<usize>,
    /// Per-view images the run hands to evaluation: scene renders for
    /// 3DSR, the independent SR results for the per-view baseline, the
    /// upsampled LR images for the bicubic baseline.
    pub outputs: Vec<Image>,
}

struct Recorder<'a> {
    dir: Option<&'a Path>,
    manifest: RunManifest,
}

impl Recorder<'_> {
    fn path(&self, rel: &str) -> Option<PathBuf> {
        self.dir.map(|d| d.join(rel))
    }

    fn mkdir(&self, rel: &str) -> Result<()> {
        if let Some(p) = self.path(rel) {
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    /// Writes `img` as PNG plus raw array; returns the PNG path relative to
    /// the run dir, or an empty string when not persisting.
    fn image(&self, rel_stem: &str, img: &Image) -> Result<String> {
        let Some(dir) = self.dir else {
            return Ok(String::new());
        };
        let png = format!("{rel_stem}.png");
        img.save_png(dir.join(&png))?;
        img.save_raw(dir.join(format!("{rel_stem}.bin")))?;
        Ok(png)
    }

    fn flush(&self) -> Result<()> {
        if let Some(p) = self.path("manifest.json") {
            let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
            fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f(self);
        self.manifest.timings.push(StageTiming {
            stage: stage.into(),
            seconds: start.elapsed().as_secs_f64(),
        });
        out
    }
}

fn write_config(dir: Option<&Path>, config: &PipelineConfig) -> Result<()> {
    if let Some(d) = dir {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        let p = d.join("config.json");
        let text = serde_json::to_string_pretty(config).expect("config serializes");
        fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn train_views(views: &ViewSet) -> Result<Vec<usize>> {
    let train = views.train_indices();
    if train.is_empty() {
        return Err(Error::Data("dataset has no training views".into()));
    }
    Ok(train)
}

fn check_factor(views: &ViewSet, config: &PipelineConfig) -> Result<()> {
    views.validate()?;
    if views.sr_factor != config.sr_factor {
        return Err(Error::Data(format!(
            "dataset sr_factor {} differs from configured {}",
            views.sr_factor, config.sr_factor
        )));
    }
    Ok(())
}

/// Fits a freshly initialized scene to the LR training images at LR
/// resolution.
pub fn pretrain_lr(views: &ViewSet, config: &PipelineConfig) -> Result<FitReport> {
    config.validate_with(&[1, 2, 4])?;
    views.validate()?;
    let train = train_views(views)?;
    let init = init_scene_from_views(views, config.n_gaussians, config.init_seed())?;
    let targets: Vec<Image> = train.iter().map(|&i| views.views[i].lr.clone()).collect();
    let cams: Vec<Camera> = train.iter().map(|&i| views.lr_camera(i)).collect();
    let mut fc = config.fit_config(config.pretrain_iterations, 0);
    fc.weights.lambda = 0.0;
    fc.sr_factor = 1;
    fit(&init, &targets, &cams, &[], &fc)
}

/// Renders `scene` at every listed view's HR camera.
pub fn render_views(views: &ViewSet, idx: &[usize], scene: &GaussianScene) -> Vec<Image> {
    idx.par_iter()
        .map(|&i| render(scene, &views.views[i].camera).image)
        .collect()
}

fn starting_scene(views: &ViewSet, config: &PipelineConfig, ctx: &RunContext, rec: &mut Recorder) -> Result<GaussianScene> {
    match &ctx.theta_lr {
        Some(s) => Ok(s.clone()),
        None => rec.time("pretrain_lr", |_| Ok(pretrain_lr(views, config)?.scene)),
    }
}

fn finish(
    rec: &mut Recorder,
    views: &ViewSet,
    scene: &GaussianScene,
    train: &[usize],
    outputs: &[Image],
) -> Result<()> {
    rec.mkdir("outputs")?;
    let mut paths = Vec::new();
    for (k, &i) in train.iter().enumerate() {
        let p = rec.image(&format!("outputs/view_{i:03}"), &outputs[k])?;
        if !p.is_empty() {
            paths.push(p);
        }
    }
    rec.manifest.outputs = paths;
    if let Some(dir) = rec.dir {
        fs::create_dir_all(dir.join("final")).map_err(|e| Error::io(dir.join("final"), e))?;
        let all: Vec<usize> = (0..views.len()).collect();
        for (i, img) in all.iter().zip(render_views(views, &all, scene)) {
            img.save_png(dir.join(format!("final/view_{i:03}.png")))?;
        }
        save_scene(scene, dir.join("scene_final.ckpt"))?;
        rec.manifest.final_scene = Some("scene_final.ckpt".into());
    }
    rec.manifest.scene_digest = Some(scene.digest());
    rec.manifest.status = "complete".into();
    rec.flush()
}

/// Flushes the manifest with the failure recorded, then returns the error.
fn fail<T>(rec: &mut Recorder, e: Error) -> Result<T> {
    rec.manifest.status = format!("failed: [{}] {e}", e.category());
    let _ = rec.flush();
    Err(e)
}

fn oracle_truth(views: &ViewSet, codec: &CodecSpec) -> Option<Vec<Latent>> {
    views
        .views
        .iter()
        .map(|v| v.hr.as_ref().and_then(|h| encode(h, codec).ok()))
        .collect()
}

/// Builds the denoiser a config describes; the oracle sees every view's
/// encoded HR ground truth, indexed like the dataset.
pub fn build_denoiser(views: &ViewSet, config: &PipelineConfig) -> Result<Denoiser> {
    Denoiser::from_spec(&config.effective_denoiser(), oracle_truth(views, &config.codec))
}

/// 3D-consistent super-resolution: at each step the per-view clean
/// estimates are decoded, a shared scene is fitted to them, and the
/// re-encoded renders replace the clean estimates in the denoising update.
pub fn run_3dsr(
    views: &ViewSet,
    denoiser: &Denoiser,
    codec: &CodecSpec,
    config: &PipelineConfig,
    ctx: &RunContext,
) -> Result<RunOutput> {
    config.validate()?;
    check_factor(views, config)?;
    let train = train_views(views)?;
    let dir = ctx.out_dir.as_deref();
    write_config(dir, config)?;
    let mut rec = Recorder {
        dir,
        manifest: RunManifest::new(RunKind::ThreeDsr, config, views, &train, ctx),
    };
    rec.flush()?;
    match sample_3dsr(views, denoiser, codec, config, ctx, &train, &mut rec) {
        Ok((scene, outputs)) => {
            finish(&mut rec, views, &scene, &train, &outputs)?;
            Ok(RunOutput {
                scene,
                manifest: rec.manifest,
                views: train,
                outputs,
            })
        }
        Err(e) => fail(&mut rec, e),
    }
}

struct Conditioned {
    schedule: NoiseSchedule,
    state: LatentState,
    cams: Vec<Camera>,
    lr: Vec<Image>,
}

fn prepare(views: &ViewSet, codec: &CodecSpec, config: &PipelineConfig, train: &[usize]) -> Result<Conditioned> {
    let schedule = config.schedule()?;
    let conditions: Vec<Latent> = train
        .iter()
        .map(|&i| encode(&views.views[i].lr, codec))
        .collect::<Result<_>>()?;
    let (w, h) = views.hr_size();
    let shape = codec.latent_shape(w, h)?;
    let state = LatentState::init(conditions, shape, schedule.steps(), config.latent_seed());
    Ok(Conditioned {
        schedule,
        state,
        cams: train.iter().map(|&i| views.views[i].camera.clone()).collect(),
        lr: train.iter().map(|&i| views.views[i].lr.clone()).collect(),
    })
}

/// Noise prediction, clean estimate and decoded image for every view.
fn estimate_all(
    denoiser: &Denoiser,
    codec: &CodecSpec,
    config: &PipelineConfig,
    c: &Conditioned,
    train: &[usize],
) -> Result<Vec<(Latent, Latent, Image)>> {
    let t = c.state.t;
    (0..train.len())
        .into_par_iter()
        .map(|k| {
            let x_t = &c.state.latents[k];
            let cond = &c.state.conditions[k];
            let eps = denoiser.predict_noise(x_t, t, cond, train[k], &c.schedule)?;
            let x0 = estimate_x0(x_t, &eps, t, &c.schedule)?;
            let h = decode(&x0, cond, codec, config.faithfulness)?;
            Ok((eps, x0, h))
        })
        .collect()
}

fn sample_3dsr(
    views: &ViewSet,
    denoiser: &Denoiser,
    codec: &CodecSpec,
    config: &PipelineConfig,
    ctx: &RunContext,
    train: &[usize],
    rec: &mut Recorder,
) -> Result<(GaussianScene, Vec<Image>)> {
    let mut c = prepare(views, codec, config, train)?;
    let mut scene = starting_scene(views, config, ctx, rec)?;
    let mut renders = Vec::new();
    // one optimizer across steps so Adam's bias-corrected warm-up happens once
    let mut adam = Adam::new(scene.len(), config.learning_rates);
    for t in (1..=c.schedule.steps()).rev() {
        let est = rec.time(&format!("step_{t}/estimate"), |_| estimate_all(denoiser, codec, config, &c, train))?;
        let outputs: Vec<Image> = est.iter().map(|e| e.2.clone()).collect();
        let report = rec.time(&format!("step_{t}/fit"), |_| {
            fit_resume(
                &scene,
                &outputs,
                &c.cams,
                &c.lr,
                &config.fit_config(config.fit_iterations_per_step, t as u64),
                &mut adam,
                |_, _| {},
            )
        })?;
        scene = report.scene;
        renders = render_views(views, train, &scene);
        let next: Vec<Latent> = (0..train.len())
            .into_par_iter()
            .map(|k| {
                let reference = encode(&renders[k], codec)?;
                let mut r = c.state.step_rng(k);
                guided_denoise_step(&c.state.latents[k], &reference, &est[k].0, t, &c.schedule, &mut r)
            })
            .collect::<Result<_>>()?;
        c.state.latents = next;
        c.state.t = t - 1;
        record_step(rec, views, train, t, &outputs, &renders, report.losses)?;
    }
    Ok((scene, renders))
}

fn record_step(
    rec: &mut Recorder,
    views: &ViewSet,
    train: &[usize],
    t: usize,
    outputs: &[Image],
    renders: &[Image],
    losses: Vec<f64>,
) -> Result<()> {
    let step_dir = format!("step_{t}");
    rec.mkdir(&step_dir)?;
    let mut o_paths = Vec::new();
    let mut r_paths = Vec::new();
    let mut vs_out = Vec::new();
    let mut vs_gt = Vec::new();
    for (k, &i) in train.iter().enumerate() {
        let po = rec.image(&format!("{step_dir}/view_{i:03}_H"), &outputs[k])?;
        let pr = rec.image(&format!("{step_dir}/view_{i:03}_R"), &renders[k])?;
        if !po.is_empty() {
            o_paths.push(po);
            r_paths.push(pr);
        }
        vs_out.push(crate::metrics::psnr(&renders[k], &outputs[k])?);
        vs_gt.push(match &views.views[i].hr {
            Some(gt) => Some(crate::metrics::psnr(&renders[k], gt)?),
            None => None,
        });
    }
    rec.manifest.steps.push(StepRecord {
        t,
        outputs: o_paths,
        renders: r_paths,
        psnr_render_vs_output: vs_out,
        psnr_render_vs_truth: vs_gt,
        fit_losses: losses,
    });
    rec.flush()
}

/// Independent per-view sampling (the clean estimate is used as its own
/// reference), then one scene fitted to the results without the LR term.
pub fn run_perview_baseline(
    views: &ViewSet,
    denoiser: &Denoiser,
    codec: &CodecSpec,
    config: &PipelineConfig,
    ctx: &RunContext,
) -> Result<RunOutput> {
    config.validate()?;
    check_factor(views, config)?;
    let train = train_views(views)?;
    let dir = ctx.out_dir.as_deref();
    write_config(dir, config)?;
    let mut rec = Recorder {
        dir,
        manifest: RunManifest::new(RunKind::PerView, config, views, &train, ctx),
    };
    rec.flush()?;
    let body = |rec: &mut Recorder| -> Result<(GaussianScene, Vec<Image>)> {
        let mut c = prepare(views, codec, config, &train)?;
        let mut outputs = Vec::new();
        for t in (1..=c.schedule.steps()).rev() {
            let est = rec.time(&format!("step_{t}/estimate"), |_| estimate_all(denoiser, codec, config, &c, &train))?;
            let next: Vec<Latent> = (0..train.len())
                .into_par_iter()
                .map(|k| {
                    let mut r = c.state.step_rng(k);
                    guided_denoise_step(&c.state.latents[k], &est[k].1, &est[k].0, t, &c.schedule, &mut r)
                })
                .collect::<Result<_>>()?;
            c.state.latents = next;
            c.state.t = t - 1;
            outputs = est.into_iter().map(|e| e.2).collect();
        }
        let start = starting_scene(views, config, ctx, rec)?;
        let scene = fit_baseline(rec, &start, &outputs, &c.cams, config)?;
        Ok((scene, outputs))
    };
    match body(&mut rec) {
        Ok((scene, outputs)) => {
            finish(&mut rec, views, &scene, &train, &outputs)?;
            Ok(RunOutput {
                scene,
                manifest: rec.manifest,
                views: train,
                outputs,
            })
        }
        Err(e) => fail(&mut rec, e),
    }
}

fn fit_baseline(
    rec: &mut Recorder,
    start: &GaussianScene,
    targets: &[Image],
    cams: &[Camera],
    config: &PipelineConfig,
) -> Result<GaussianScene> {
    let mut fc = config.fit_config(config.steps * config.fit_iterations_per_step, 1000);
    fc.weights.lambda = 0.0;
    let report = rec.time("fit", |_| fit(start, targets, cams, &[], &fc))?;
    rec.manifest.steps.push(StepRecord {
        t: 0,
        outputs: Vec::new(),
        renders: Vec::new(),
        psnr_render_vs_output: Vec::new(),
        psnr_render_vs_truth: Vec::new(),
        fit_losses: report.losses,
    });
    Ok(report.scene)
}

/// Bicubic upsampling of the LR views followed by a plain scene fit. With
/// `sr_factor` 1 this is exactly the LR pretraining result.
pub fn run_bicubic_baseline(views: &ViewSet, config: &PipelineConfig, ctx: &RunContext) -> Result<RunOutput> {
    config.validate_with(&[1, 2, 4])?;
    check_factor(views, config)?;
    let train = train_views(views)?;
    let dir = ctx.out_dir.as_deref();
    write_config(dir, config)?;
    let mut rec = Recorder {
        dir,
        manifest: RunManifest::new(RunKind::Bicubic, config, views, &train, ctx),
    };
    rec.flush()?;
    let body = |rec: &mut Recorder| -> Result<(GaussianScene, Vec<Image>)> {
        let outputs: Vec<Image> = train
            .iter()
            .map(|&i| views.views[i].lr.upsample_bicubic(config.sr_factor).clamp01())
            .collect();
        let start = starting_scene(views, config, ctx, rec)?;
        if config.sr_factor == 1 {
            return Ok((start, outputs));
        }
        let cams: Vec<Camera> = train.iter().map(|&i| views.views[i].camera.clone()).collect();
        let scene = fit_baseline(rec, &start, &outputs, &cams, config)?;
        Ok((scene, outputs))
    };
    match body(&mut rec) {
        Ok((scene, outputs)) => {
            finish(&mut rec, views, &scene, &train, &outputs)?;
            Ok(RunOutput {
                scene,
                manifest: rec.manifest,
                views: train,
                outputs,
            })
        }
        Err(e) => fail(&mut rec, e),
    }
}

/// Pretraining as a standalone run writing `scene_final.ckpt`.
pub fn run_pretrain(views: &ViewSet, config: &PipelineConfig, ctx: &RunContext) -> Result<RunOutput> {
    config.validate_with(&[1, 2, 4])?;
    check_factor(views, config)?;
    let train = train_views(views)?;
    let dir = ctx.out_dir.as_deref();
    write_config(dir, config)?;
    let mut rec = Recorder {
        dir,
        manifest: RunManifest::new(RunKind::Pretrain, config, views, &train, ctx),
    };
    rec.flush()?;
    match rec.time("pretrain_lr", |_| pretrain_lr(views, config)) {
        Ok(report) => {
            let outputs: Vec<Image> = train
                .iter()
                .map(|&i| render(&report.scene, &views.lr_camera(i)).image)
                .collect();
            rec.manifest.steps.push(StepRecord {
                t: 0,
                outputs: Vec::new(),
                renders: Vec::new(),
                psnr_render_vs_output: Vec::new(),
                psnr_render_vs_truth: Vec::new(),
                fit_losses: report.losses,
            });
            rec.mkdir("outputs")?;
            let mut paths = Vec::new();
            for (k, &i) in train.iter().enumerate() {
                let p = rec.image(&format!("outputs/view_{i:03}"), &outputs[k])?;
                if !p.is_empty() {
                    paths.push(p);
                }
            }
            rec.manifest.outputs = paths;
            if let Some(d) = dir {
                save_scene(&report.scene, d.join("scene_final.ckpt"))?;
                rec.manifest.final_scene = Some("scene_final.ckpt".into());
            }
            rec.manifest.scene_digest = Some(report.scene.digest());
            rec.manifest.status = "complete".into();
            rec.flush()?;
            Ok(RunOutput {
                scene: report.scene,
                manifest: rec.manifest,
                views: train,
                outputs,
            })
        }
        Err(e) => fail(&mut rec, e),
    }
}

/// Cross-view consistency of `images` (one per entry of `idx`), warped with
/// depths rendered from `scene`.
pub fn consistency(
    views: &ViewSet,
    scene: &GaussianScene,
    idx: &[usize],
    images: &[Image],
) -> Result<ConsistencyMatrix> {
    if idx.len() != images.len() {
        return Err(Error::Data("images and view indices differ in count".into()));
    }
    let depth: Vec<Image> = idx
        .par_iter()
        .map(|&i| render(scene, &views.views[i].camera).depth_image())
        .collect();
    let cams: Vec<Camera> = idx.iter().map(|&i| views.views[i].camera.clone()).collect();
    cross_view_consistency(
        images,
        &depth,
        &cams,
        &ConsistencyConfig::for_scene_diameter(views.meta.diameter()),
    )
}

/// Test-view fidelity of `scene` against HR ground truth, and cross-view
/// consistency of its renders at the training views.
pub fn evaluate(views: &ViewSet, scene: &GaussianScene, run_id: &str) -> Result<MetricsReport> {
    let test: Vec<usize> = views
        .test_indices()
        .into_iter()
        .filter(|&i| views.views[i].hr.is_some())
        .collect();
    if test.is_empty() {
        return Err(Error::Data("no test views with HR ground truth to evaluate".into()));
    }
    let renders = render_views(views, &test, scene);
    let truth: Vec<Image> = test.iter().map(|&i| views.ground_truth(i).cloned()).collect::<Result<_>>()?;
    let train = views.train_indices();
    let matrix = consistency(views, scene, &train, &render_views(views, &train, scene))?;
    let mut report = MetricsReport::build(run_id, &test, &renders, &truth, &matrix)?;
    // matrix positions -> dataset view indices
    for p in &mut report.consistency.pairs {
        *p = (train[p.0], train[p.1], p.2);
    }
    for p in &mut report.aggregates.excluded_pairs {
        *p = (train[p.0], train[p.1]);
    }
    Ok(report)
}

/// Mean absolute difference between the subsampled renders and the LR
/// observations over `idx`.
pub fn lr_agreement(views: &ViewSet, idx: &[usize], scene: &GaussianScene) -> Result<f64> {
    let renders = render_views(views, idx, scene);
    let mut total = 0.0;
    for (r, &i) in renders.iter().zip(idx) {
        total += r.area_downsample(views.sr_factor)?.mean_abs_diff(&views.views[i].lr)?;
    }
    Ok(total / idx.len().max(1) as f64)
}

/// Reads back the per-view outputs a finished run persisted.
pub fn load_outputs(run_dir: impl AsRef<Path>, manifest: &RunManifest) -> Result<Vec<Image>> {
    let dir = run_dir.as_ref();
    manifest
        .views
        .iter()
        .map(|&i| Image::load_raw(dir.join(format!("outputs/view_{i:03}.bin"))))
        .collect()
}
