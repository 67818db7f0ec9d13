//! 3D-consistent diffusion super-resolution.
//!
//! A few-step diffusion sampler super-resolves every view of a scene, and at
//! each denoising step the per-view clean estimates are projected through a
//! jointly fitted 3D Gaussian splatting scene before the next step.

pub mod codec;
pub mod data;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod image;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod scene;

pub use crate::codec::CodecSpec;
pub use crate::data::{Split, View, ViewSet};
pub use crate::denoiser::{Denoiser, DenoiserSpec};
pub use crate::diffusion::{LatentState, NoiseSchedule};
pub use crate::error::{Error, Result};
pub use crate::image::{Image, Latent};
pub use crate::metrics::MetricsReport;
pub use crate::pipeline::{PipelineConfig, RunManifest};
pub use crate::scene::{Camera, FitConfig, GaussianScene};
