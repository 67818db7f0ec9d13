//! `splatsr` command-line front end.

mod config;
mod grid;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use splatsr::data::{load_dataset, make_synthetic_scene, save_dataset, split_every_kth, SyntheticKind};
use splatsr::metrics::write_report;
use splatsr::pipeline::{
    build_denoiser, evaluate, run_3dsr, run_bicubic_baseline, run_perview_baseline, run_pretrain, RunContext,
    RunOutput,
};
use splatsr::scene::checkpoint::load_scene;
use splatsr::{Error, PipelineConfig, Result, RunManifest, ViewSet};

use crate::config::{parse_override, Override};

#[derive(Debug, Parser)]
#[command(name = "splatsr", version, about = "3D-consistent diffusion super-resolution of multi-view images")]
struct Cli {
    /// JSON pipeline config; missing keys keep their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file and --set.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (PNG path for render-grid).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Dotted-key override such as `denoiser.hallucination_strength=0.3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", value_parser = parse_override)]
    overrides: Vec<Override>,
    /// Log verbosity: -v info, -vv debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DataKind {
    PatchSphere,
    TexturedPlane,
    BlobCluster,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BaselineKind {
    Perview,
    Bicubic,
}

#[derive(Debug, Args)]
struct DataArg {
    /// Dataset directory written by make-data.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic multi-view dataset (HR truth, LR inputs, poses).
    MakeData {
        #[arg(long, value_enum, default_value = "patch-sphere")]
        kind: DataKind,
        /// Patches or blobs in the scene.
        #[arg(long, default_value_t = 300)]
        count: usize,
        #[arg(long, default_value_t = 24)]
        n_views: usize,
        /// HR image side in pixels.
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Every k-th view is held out for testing.
        #[arg(long, default_value_t = 8)]
        every: usize,
    },
    /// Fit the low-resolution scene and write its checkpoint.
    PretrainLr {
        #[command(flatten)]
        data: DataArg,
    },
    /// Run 3D-consistent super-resolution and evaluate it.
    #[command(name = "run-3dsr")]
    Run3dsr {
        #[command(flatten)]
        data: DataArg,
        /// Reuse a pretrained low-resolution checkpoint.
        #[arg(long)]
        theta_lr: Option<PathBuf>,
    },
    /// Run a baseline and evaluate it.
    RunBaseline {
        #[command(flatten)]
        data: DataArg,
        #[arg(long, value_enum)]
        kind: BaselineKind,
        #[arg(long)]
        theta_lr: Option<PathBuf>,
    },
    /// Evaluate a finished run: writes metrics.json and metrics.csv.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        /// Dataset directory; defaults to the one recorded in the manifest.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Comparison grid of LR upsample, baseline, 3DSR and ground truth.
    RenderGrid {
        /// 3DSR run directory.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated view indices; defaults to the test views.
        #[arg(long, value_delimiter = ',')]
        views: Option<Vec<usize>>,
    },
}

fn require_out(out: &Option<PathBuf>) -> Result<&Path> {
    out.as_deref().ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn context(out: &Path, data: &Path, theta_lr: Option<&Path>) -> Result<RunContext> {
    Ok(RunContext {
        out_dir: Some(out.to_path_buf()),
        theta_lr: theta_lr.map(load_scene).transpose()?,
        dataset: Some(data.to_path_buf()),
    })
}

fn finish_run(views: &ViewSet, out: &RunOutput, dir: &Path) -> Result<()> {
    let report = evaluate(views, &out.scene, out.manifest.kind.label())?;
    write_report(&report, dir.join("metrics.json"))?;
    println!(
        "{}: test PSNR {:.3} dB, SSIM {:.4}, consistency {:.4}",
        out.manifest.kind.label(),
        report.aggregates.psnr_mean,
        report.aggregates.ssim_mean,
        report.consistency.mean
    );
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let config: PipelineConfig = config::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    match &cli.command {
        Command::MakeData { kind, count, n_views, size, every } => {
            let out = require_out(&cli.out)?;
            let kind = match kind {
                DataKind::PatchSphere => SyntheticKind::PatchSphere { patches: *count },
                DataKind::TexturedPlane => SyntheticKind::TexturedPlane,
                DataKind::BlobCluster => SyntheticKind::BlobCluster { blobs: *count },
            };
            let views = make_synthetic_scene(kind, *n_views, *size, config.sr_factor, config.seed)?;
            let views = split_every_kth(&views, *every)?;
            save_dataset(&views, out)?;
            println!(
                "wrote {} views ({} train, {} test) to {}",
                views.len(),
                views.train_indices().len(),
                views.test_indices().len(),
                out.display()
            );
        }
        Command::PretrainLr { data } => {
            let out = require_out(&cli.out)?;
            let views = load_dataset(&data.data)?;
            let run = run_pretrain(&views, &config, &context(out, &data.data, None)?)?;
            info!("pretraining final loss {:?}", run.manifest.steps[0].fit_losses.last());
            println!("wrote {}", out.join("scene_final.ckpt").display());
        }
        Command::Run3dsr { data, theta_lr } => {
            let out = require_out(&cli.out)?;
            let views = load_dataset(&data.data)?;
            let ctx = context(out, &data.data, theta_lr.as_deref())?;
            let denoiser = build_denoiser(&views, &config)?;
            let run = run_3dsr(&views, &denoiser, &config.codec, &config, &ctx)?;
            finish_run(&views, &run, out)?;
        }
        Command::RunBaseline { data, kind, theta_lr } => {
            let out = require_out(&cli.out)?;
            let views = load_dataset(&data.data)?;
            let ctx = context(out, &data.data, theta_lr.as_deref())?;
            let run = match kind {
                BaselineKind::Perview => {
                    let denoiser = build_denoiser(&views, &config)?;
                    run_perview_baseline(&views, &denoiser, &config.codec, &config, &ctx)?
                }
                BaselineKind::Bicubic => run_bicubic_baseline(&views, &config, &ctx)?,
            };
            finish_run(&views, &run, out)?;
        }
        Command::Evaluate { run, data } => {
            let manifest = RunManifest::load(run.join("manifest.json"))?;
            if !manifest.status.starts_with("complete") {
                return Err(Error::Data(format!("{}: run status is `{}`", run.display(), manifest.status)));
            }
            let data_dir = data
                .clone()
                .or_else(|| manifest.dataset.as_ref().map(PathBuf::from))
                .ok_or_else(|| Error::Data("manifest records no dataset; pass --data".into()))?;
            let views = load_dataset(&data_dir)?;
            if views.digest() != manifest.dataset_digest {
                return Err(Error::Data(format!("{} does not match the run's dataset", data_dir.display())));
            }
            let ckpt = manifest
                .final_scene
                .as_ref()
                .map(|f| run.join(f))
                .ok_or_else(|| Error::Data(format!("{}: no final scene recorded", run.display())))?;
            let scene = load_scene(&ckpt)?;
            let report = evaluate(&views, &scene, manifest.kind.label())?;
            let dir = cli.out.clone().unwrap_or_else(|| run.clone());
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
            write_report(&report, dir.join("metrics.json"))?;
            println!(
                "{}: test PSNR {:.3} dB, SSIM {:.4}, consistency {:.4}; wrote {}",
                manifest.kind.label(),
                report.aggregates.psnr_mean,
                report.aggregates.ssim_mean,
                report.consistency.mean,
                dir.join("metrics.json").display()
            );
        }
        Command::RenderGrid { run, baseline, data, views } => {
            let out = require_out(&cli.out)?;
            let layout = grid::render_grid(run, baseline, data.as_deref(), views.as_deref(), out)?;
            for note in &layout.notes {
                eprintln!("note: {note}");
            }
            println!(
                "wrote {} ({} columns x {} rows)",
                out.display(),
                layout.columns.len(),
                layout.views.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::from(1)
        }
    }
}
