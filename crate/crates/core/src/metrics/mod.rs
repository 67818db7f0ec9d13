//! Fidelity and cross-view consistency measurements.

mod ssim;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scene::Camera;

pub use ssim::{ssim, ssim_with_grad, SsimValue, WINDOW as SSIM_WINDOW};

/// Reported for identical images instead of +inf.
pub const PSNR_CAP: f64 = 99.0;

/// Peak signal-to-noise ratio for images in [0, 1].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let mse = a.mse(b)?;
    if mse <= 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Variance of the 4-neighbour Laplacian over interior pixels, averaged over
/// channels. Higher means more high-frequency energy.
pub fn laplacian_variance(img: &Image) -> f64 {
    let (w, h, ch) = img.shape();
    if w < 3 || h < 3 {
        return 0.0;
    }
    let mut total = 0.0;
    for c in 0..ch {
        let mut vals = Vec::with_capacity((w - 2) * (h - 2));
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                vals.push(
                    img.get(x - 1, y, c) + img.get(x + 1, y, c) + img.get(x, y - 1, c) + img.get(x, y + 1, c)
                        - 4.0 * img.get(x, y, c),
                );
            }
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        total += vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64;
    }
    total / ch as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyConfig {
    /// Maximum disagreement between the reprojected depth and the depth
    /// rendered in the target view.
    pub depth_tolerance: f64,
    /// Pairs whose overlap fraction is below this are excluded.
    pub min_overlap: f64,
}

impl ConsistencyConfig {
    /// Tolerance of 1% of the scene diameter, 10% minimum overlap.
    pub fn for_scene_diameter(diameter: f64) -> Self {
        Self {
            depth_tolerance: 0.01 * diameter,
            min_overlap: 0.1,
        }
    }
}

/// Symmetric pairwise warp errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyMatrix {
    pub views: usize,
    pub errors: Vec<f64>,
    pub overlap: Vec<f64>,
    /// Pairs `(i, j)`, `i < j`, dropped for insufficient overlap.
    pub excluded: Vec<(usize, usize)>,
}

impl ConsistencyMatrix {
    pub fn error(&self, i: usize, j: usize) -> f64 {
        self.errors[i * self.views + j]
    }

    /// Upper-triangle pairs that passed the overlap check.
    pub fn pairs(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for i in 0..self.views {
            for j in i + 1..self.views {
                if !self.excluded.contains(&(i, j)) {
                    out.push((i, j, self.error(i, j)));
                }
            }
        }
        out
    }

    /// Mean over every pair, ignoring the overlap check.
    pub fn mean_all(&self) -> f64 {
        let n = self.views;
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                sum += self.error(i, j);
            }
        }
        sum / (n * (n - 1) / 2).max(1) as f64
    }

    /// Mean over included pairs; `None` when every pair was excluded.
    pub fn mean(&self) -> Option<f64> {
        let p = self.pairs();
        if p.is_empty() {
            None
        } else {
            Some(p.iter().map(|x| x.2).sum::<f64>() / p.len() as f64)
        }
    }
}

/// Mean absolute color error of view `i` warped into view `j`, and the
/// fraction of view `i`'s surface pixels (positive depth) that took part.
fn directed_error(
    ri: &Image,
    di: &Image,
    ci: &Camera,
    rj: &Image,
    dj: &Image,
    cj: &Camera,
    cfg: &ConsistencyConfig,
) -> (f64, f64) {
    let (w, h, ch) = ri.shape();
    let mut sample = vec![0.0; ch];
    let mut err = 0.0;
    let mut count = 0usize;
    let mut surface = 0usize;
    for y in 0..h {
        for x in 0..w {
            let z = di.get(x, y, 0);
            if !(z > 0.0) {
                continue;
            }
            surface += 1;
            let p = ci.unproject(x as f64 + 0.5, y as f64 + 0.5, z);
            let Some((u, v, zj)) = cj.project(&p) else {
                continue;
            };
            if !cj.in_bounds(u, v) {
                continue;
            }
            let target_z = dj.get(u as usize, v as usize, 0);
            if !(target_z > 0.0) || (zj - target_z).abs() >= cfg.depth_tolerance {
                continue;
            }
            if !rj.sample_bilinear(u, v, &mut sample) {
                continue;
            }
            let mut e = 0.0;
            for (c, s) in sample.iter().enumerate() {
                e += (ri.get(x, y, c) - s).abs();
            }
            err += e / ch as f64;
            count += 1;
        }
    }
    if count == 0 {
        (0.0, 0.0)
    } else {
        (err / count as f64, count as f64 / surface as f64)
    }
}

/// Depth-guided warp-and-compare error between every pair of views.
///
/// Pixels of view `i` are lifted with `depths[i]`, moved into view `j`,
/// and compared against a bilinear sample of `renders[j]` wherever they land
/// inside the image with depths agreeing to within the tolerance. The two
/// directions of each pair are averaged.
pub fn cross_view_consistency(
    renders: &[Image],
    depths: &[Image],
    cameras: &[Camera],
    cfg: &ConsistencyConfig,
) -> Result<ConsistencyMatrix> {
    let n = renders.len();
    if n < 2 {
        return Err(Error::Config("consistency needs at least two views".into()));
    }
    if depths.len() != n {
        return Err(Error::Config(format!(
            "missing depth maps: {} renders but {} depths",
            n,
            depths.len()
        )));
    }
    if cameras.len() != n {
        return Err(Error::Config(format!(
            "{} renders but {} cameras",
            n,
            cameras.len()
        )));
    }
    for i in 0..n {
        let (w, h, _) = renders[i].shape();
        if depths[i].shape() != (w, h, 1) || (cameras[i].width, cameras[i].height) != (w, h) {
            return Err(Error::Shape(format!(
                "view {i}: render, depth and camera sizes disagree"
            )));
        }
    }
    let mut directed = vec![(0.0, 1.0); n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                directed[i * n + j] = directed_error(
                    &renders[i],
                    &depths[i],
                    &cameras[i],
                    &renders[j],
                    &depths[j],
                    &cameras[j],
                    cfg,
                );
            }
        }
    }
    let mut errors = vec![0.0; n * n];
    let mut overlap = vec![1.0; n * n];
    let mut excluded = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (eij, oij) = directed[i * n + j];
            let (eji, oji) = directed[j * n + i];
            let e = 0.5 * (eij + eji);
            let o = oij.min(oji);
            errors[i * n + j] = e;
            errors[j * n + i] = e;
            overlap[i * n + j] = o;
            overlap[j * n + i] = o;
            if o < cfg.min_overlap {
                excluded.push((i, j));
            }
        }
    }
    Ok(ConsistencyMatrix {
        views: n,
        errors,
        overlap,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencySummary {
    pub pairs: Vec<(usize, usize, f64)>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    pub excluded_pairs: Vec<(usize, usize)>,
    pub ssim_window_cropped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub per_view: Vec<ViewMetrics>,
    pub consistency: ConsistencySummary,
    pub aggregates: Aggregates,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64;
    (m, var.sqrt())
}

impl MetricsReport {
    /// Scores `renders` against `truth` (same order as `views`) and folds in
    /// a consistency matrix.
    pub fn build(
        run_id: impl Into<String>,
        views: &[usize],
        renders: &[Image],
        truth: &[Image],
        consistency: &ConsistencyMatrix,
    ) -> Result<Self> {
        if views.len() != renders.len() || renders.len() != truth.len() {
            return Err(Error::Data("views, renders and ground truth differ in count".into()));
        }
        let mut per_view = Vec::with_capacity(views.len());
        let mut cropped = false;
        for ((&view, r), t) in views.iter().zip(renders).zip(truth) {
            let s = ssim(r, t)?;
            cropped |= s.cropped;
            per_view.push(ViewMetrics {
                view,
                psnr: psnr(r, t)?,
                ssim: s.value,
            });
        }
        let (psnr_mean, psnr_std) = mean_std(&per_view.iter().map(|v| v.psnr).collect::<Vec<_>>());
        let (ssim_mean, ssim_std) = mean_std(&per_view.iter().map(|v| v.ssim).collect::<Vec<_>>());
        Ok(Self {
            run_id: run_id.into(),
            per_view,
            consistency: ConsistencySummary {
                pairs: consistency.pairs(),
                mean: consistency.mean().unwrap_or_else(|| consistency.mean_all()),
            },
            aggregates: Aggregates {
                psnr_mean,
                psnr_std,
                ssim_mean,
                ssim_std,
                excluded_pairs: consistency.excluded.clone(),
                ssim_window_cropped: cropped,
            },
        })
    }

    fn validate(&self) -> Result<()> {
        let mut values: Vec<(&str, f64)> = vec![
            ("consistency.mean", self.consistency.mean),
            ("aggregates.psnr_mean", self.aggregates.psnr_mean),
            ("aggregates.psnr_std", self.aggregates.psnr_std),
            ("aggregates.ssim_mean", self.aggregates.ssim_mean),
            ("aggregates.ssim_std", self.aggregates.ssim_std),
        ];
        for v in &self.per_view {
            values.push(("per_view.psnr", v.psnr));
            values.push(("per_view.ssim", v.ssim));
        }
        for p in &self.consistency.pairs {
            values.push(("consistency.pairs", p.2));
        }
        if let Some((name, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data(format!("metric {name} is not finite ({v})")));
        }
        Ok(())
    }
}

fn csv_path(json: &Path) -> PathBuf {
    json.with_extension("csv")
}

/// Writes the JSON report at `path` and a per-view CSV next to it.
pub fn write_report(report: &MetricsReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    report.validate()?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    let mut csv = String::from("view,psnr,ssim\n");
    for v in &report.per_view {
        csv.push_str(&format!("{},{},{}\n", v.view, v.psnr, v.ssim));
    }
    let cp = csv_path(path);
    fs::write(&cp, csv).map_err(|e| Error::io(cp, e))?;
    Ok(())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<MetricsReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_reference_values() {
        let a = Image::filled(4, 4, 3, 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Image::filled(4, 4, 3, 0.4);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let zeros = Image::filled(4, 4, 3, 0.0);
        let ones = Image::filled(4, 4, 3, 1.0);
        assert!(psnr(&zeros, &ones).unwrap().abs() < 1e-12);
        assert!(psnr(&a, &Image::new(3, 4, 3)).is_err());
    }

    #[test]
    fn psnr_and_ssim_are_symmetric() {
        let a = Image::from_fn(16, 12, 3, |x, y, c| ((x * 5 + y * 3 + c) % 11) as f64 / 10.0);
        let b = Image::from_fn(16, 12, 3, |x, y, c| ((x + y * 7 + 2 * c) % 13) as f64 / 12.0);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!((ssim(&a, &b).unwrap().value - ssim(&b, &a).unwrap().value).abs() < 1e-9);
    }

    fn sample_report() -> MetricsReport {
        MetricsReport {
            run_id: "r".into(),
            per_view: vec![
                ViewMetrics { view: 0, psnr: 21.5, ssim: 0.7 },
                ViewMetrics { view: 8, psnr: 23.25, ssim: 0.8 },
            ],
            consistency: ConsistencySummary {
                pairs: vec![(0, 1, 0.125)],
                mean: 0.125,
            },
            aggregates: Aggregates {
                psnr_mean: 22.375,
                psnr_std: 0.875,
                ssim_mean: 0.75,
                ssim_std: 0.05,
                excluded_pairs: vec![],
                ssim_window_cropped: false,
            },
        }
    }

    #[test]
    fn report_round_trip_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("metrics.json");
        let r = sample_report();
        write_report(&r, &p).unwrap();
        assert_eq!(read_report(&p).unwrap(), r);
        let csv = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().count(), r.per_view.len() + 1);
    }

    #[test]
    fn nan_metrics_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = sample_report();
        r.per_view[1].ssim = f64::NAN;
        assert!(matches!(
            write_report(&r, dir.path().join("m.json")),
            Err(Error::Data(_))
        ));
        assert!(!dir.path().join("m.json").exists());
    }
}
