//! Comparison grids: one row per view, columns LR upsample | baseline |
//! 3DSR | GT under a small text header.

use std::path::{Path, PathBuf};

use serde_json::json;
use splatsr::data::load_dataset;
use splatsr::{Error, Image, Result, RunManifest, ViewSet};

pub const HEADER: usize = 7;

/// 3x5 bitmaps, one row per byte, high bit on the left.
fn glyph(c: char) -> [u8; 5] {
    match c {
        'L' => [0b100, 0b100, 0b100, 0b100, 0b111],
        'R' => [0b110, 0b101, 0b110, 0b101, 0b101],
        'B' => [0b110, 0b101, 0b110, 0b101, 0b110],
        'A' => [0b010, 0b101, 0b111, 0b101, 0b101],
        'S' => [0b011, 0b100, 0b010, 0b001, 0b110],
        'E' => [0b111, 0b100, 0b110, 0b100, 0b111],
        'D' => [0b110, 0b101, 0b101, 0b101, 0b110],
        'G' => [0b011, 0b100, 0b101, 0b101, 0b011],
        'T' => [0b111, 0b010, 0b010, 0b010, 0b010],
        '3' => [0b110, 0b001, 0b010, 0b001, 0b110],
        _ => [0; 5],
    }
}

fn draw_label(img: &mut Image, text: &str, x0: usize, max_x: usize) {
    for (k, ch) in text.chars().enumerate() {
        let rows = glyph(ch);
        for (dy, bits) in rows.iter().enumerate() {
            for dx in 0..3 {
                let x = x0 + 1 + 4 * k + dx;
                if bits >> (2 - dx) & 1 == 1 && x < max_x {
                    for c in 0..3 {
                        img.set(x, 1 + dy, c, 1.0);
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridLayout {
    pub columns: Vec<&'static str>,
    pub views: Vec<usize>,
    pub notes: Vec<String>,
    pub cell: (usize, usize),
}

struct RunArtifacts {
    manifest: RunManifest,
    dir: PathBuf,
}

fn final_png(dir: &Path, view: usize) -> PathBuf {
    dir.join(format!("final/view_{view:03}.png"))
}

fn dataset_path(run: &RunArtifacts, data: Option<&Path>) -> Option<PathBuf> {
    data.map(Path::to_path_buf).or_else(|| run.manifest.dataset.as_ref().map(PathBuf::from))
}

fn collect_missing(paths: &[PathBuf], missing: &mut Vec<String>) {
    for p in paths {
        if !p.exists() {
            missing.push(p.display().to_string());
        }
    }
}

fn missing_error(missing: Vec<String>) -> Error {
    Error::Data(format!("missing artifacts: {}", missing.join(", ")))
}

/// Builds the grid, writes it to `out_png` and a layout sidecar next to it.
pub fn render_grid(
    run_dir: &Path,
    baseline_dir: &Path,
    data: Option<&Path>,
    views: Option<&[usize]>,
    out_png: &Path,
) -> Result<GridLayout> {
    let mut missing = Vec::new();
    collect_missing(&[run_dir.join("manifest.json"), baseline_dir.join("manifest.json")], &mut missing);
    if !missing.is_empty() {
        return Err(missing_error(missing));
    }
    let run = RunArtifacts { manifest: RunManifest::load(run_dir.join("manifest.json"))?, dir: run_dir.into() };
    let base = RunArtifacts { manifest: RunManifest::load(baseline_dir.join("manifest.json"))?, dir: baseline_dir.into() };
    let Some(data_dir) = dataset_path(&run, data) else {
        return Err(Error::Data(format!("{}: manifest records no dataset; pass --data", run_dir.display())));
    };
    if !data_dir.join("poses.json").exists() {
        return Err(missing_error(vec![data_dir.join("poses.json").display().to_string()]));
    }
    let dataset: ViewSet = load_dataset(&data_dir)?;
    // the digest is not compared: a copy without HR images is a valid source
    for r in [&run, &base] {
        if let Some(&bad) = r.manifest.views.iter().find(|&&i| i >= dataset.len()) {
            return Err(Error::Data(format!("{} refers to view {bad}, dataset has {}", r.dir.display(), dataset.len())));
        }
    }
    let selected = match views {
        Some(v) => v.to_vec(),
        None => dataset.test_indices(),
    };
    if selected.is_empty() {
        return Err(Error::Data("no views to show".into()));
    }
    if let Some(&bad) = selected.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::Param { field: "views", reason: format!("view {bad} out of range for {} views", dataset.len()) });
    }
    for &i in &selected {
        collect_missing(&[final_png(&base.dir, i), final_png(&run.dir, i)], &mut missing);
    }
    if !missing.is_empty() {
        return Err(missing_error(missing));
    }

    let (w, h) = dataset.hr_size();
    let factor = dataset.sr_factor;
    let has_gt = selected.iter().all(|&i| dataset.views[i].hr.is_some());
    let mut columns = vec!["LR", "BASE", "3DSR"];
    let mut notes = Vec::new();
    if has_gt {
        columns.push("GT");
    } else {
        notes.push("ground truth unavailable; GT column omitted".to_owned());
    }
    let mut grid = Image::new(w * columns.len(), HEADER + h * selected.len(), 3);
    for (col, label) in columns.iter().enumerate() {
        draw_label(&mut grid, label, col * w, (col + 1) * w);
    }
    for (row, &i) in selected.iter().enumerate() {
        let mut cells = vec![
            dataset.views[i].lr.upsample_bicubic(factor).clamp01(),
            Image::load_png(final_png(&base.dir, i))?,
            Image::load_png(final_png(&run.dir, i))?,
        ];
        if has_gt {
            cells.push(dataset.views[i].hr.clone().unwrap());
        }
        for (col, cell) in cells.iter().enumerate() {
            if cell.shape() != (w, h, 3) {
                return Err(Error::Shape(format!("view {i} column {}: {:?} vs {:?}", columns[col], cell.shape(), (w, h, 3))));
            }
            cell.blit_into(&mut grid, col * w, HEADER + row * h);
        }
    }
    grid.save_png(out_png)?;
    let sidecar = out_png.with_extension("json");
    let layout = json!({
        "columns": columns,
        "views": selected,
        "notes": notes,
        "cell": [w, h],
        "header_rows": HEADER,
        "run": run_dir.display().to_string(),
        "baseline": baseline_dir.display().to_string(),
        "baseline_kind": base.manifest.kind.label(),
    });
    std::fs::write(&sidecar, serde_json::to_string_pretty(&layout).unwrap() + "\n")
        .map_err(|e| Error::Io { path: sidecar.clone(), source: e })?;
    Ok(GridLayout { columns, views: selected, notes, cell: (w, h) })
}
