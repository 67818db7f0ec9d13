//! Scene checkpoint file: a one-line JSON header followed by the raw
//! little-endian f64 parameter array (`N x 14`, see [`Gaussian::to_array`]).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Gaussian, GaussianScene, PARAMS_PER_GAUSSIAN};
use crate::error::{Error, Result};

const MAGIC: &str = "splat-scene/v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub count: usize,
    pub background: [f64; 3],
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    /// Per-Gaussian field order and activation of each stored value.
    pub layout: Vec<String>,
    pub digest: String,
}

fn layout() -> Vec<String> {
    [
        "position.x",
        "position.y",
        "position.z",
        "log_scale.x (exp)",
        "log_scale.y (exp)",
        "log_scale.z (exp)",
        "rotation.w (normalized quaternion)",
        "rotation.x",
        "rotation.y",
        "rotation.z",
        "opacity (sigmoid)",
        "color.r (sigmoid)",
        "color.g (sigmoid)",
        "color.b (sigmoid)",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn bounds(scene: &GaussianScene) -> ([f64; 3], [f64; 3]) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for g in &scene.gaussians {
        for k in 0..3 {
            lo[k] = lo[k].min(g.position[k]);
            hi[k] = hi[k].max(g.position[k]);
        }
    }
    (lo, hi)
}

pub fn save_scene(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    scene.validate()?;
    let (bounds_min, bounds_max) = bounds(scene);
    let header = CheckpointHeader {
        format: MAGIC.into(),
        count: scene.len(),
        background: scene.background,
        bounds_min,
        bounds_max,
        layout: layout(),
        digest: scene.digest(),
    };
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    for g in &scene.gaussians {
        for v in g.to_array() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<GaussianScene> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Data(format!("{}: missing checkpoint header", path.display())))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    if header.format != MAGIC {
        return Err(Error::Data(format!(
            "{}: unknown checkpoint format {:?}",
            path.display(),
            header.format
        )));
    }
    let body = &bytes[nl + 1..];
    if body.len() != header.count * PARAMS_PER_GAUSSIAN * 8 {
        return Err(Error::Data(format!(
            "{}: header declares {} Gaussians but body has {} bytes",
            path.display(),
            header.count,
            body.len()
        )));
    }
    let gaussians = body
        .chunks_exact(PARAMS_PER_GAUSSIAN * 8)
        .map(|chunk| {
            let mut a = [0.0; PARAMS_PER_GAUSSIAN];
            for (k, c) in chunk.chunks_exact(8).enumerate() {
                a[k] = f64::from_le_bytes(c.try_into().expect("8-byte chunk"));
            }
            Gaussian::from_array(&a)
        })
        .collect();
    let scene = GaussianScene::new(gaussians, header.background)?;
    if scene.digest() != header.digest {
        return Err(Error::Data(format!("{}: digest mismatch", path.display())));
    }
    Ok(scene)
}
