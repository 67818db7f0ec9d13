use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use splatsr::Image;

fn splatsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatsr")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = splatsr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _root: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let root_dir = tempfile::tempdir().unwrap();
    let root = root_dir.path().to_path_buf();
    let data = root.join("data");
    let config = root.join("c.json");
    std::fs::write(
        &config,
        r#"{"steps": 2, "fit_iterations_per_step": 5, "pretrain_iterations": 10, "n_gaussians": 30, "batch_size": 0}"#,
    )
    .unwrap();
    ok(&["make-data", "--count", "40", "--n-views", "8", "--size", "16", "--every", "4", "--out", s(&data)]);
    Fixture { _root: root_dir, root, data, config }
}

fn run(f: &Fixture, name: &str, extra: &[&str]) -> PathBuf {
    run_seeded(f, name, "7", extra)
}

fn run_seeded(f: &Fixture, name: &str, seed: &str, extra: &[&str]) -> PathBuf {
    let out = f.root.join(name);
    let mut args = extra.to_vec();
    args.extend_from_slice(&["--config", s(&f.config), "--seed", seed, "--data", s(&f.data), "--out", s(&out)]);
    ok(&args);
    out
}

#[test]
fn usage_errors_exit_with_status_2() {
    for args in [&["frobnicate"][..], &["run-3dsr", "--bogus"], &[], &["run-baseline", "--kind", "sharp", "--data", "x"]] {
        let out = splatsr(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    let out = splatsr(&["run-3dsr", "--data", "x", "--set", "no-equals-sign"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1_with_a_category_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = splatsr(&["run-3dsr", "--data", s(&dir.path().join("none")), "--out", s(&dir.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[parse]: "), "{err}");

    let out = splatsr(&["evaluate", "--run", s(dir.path()), "--set", "stepz=3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[config]: "));
}

#[test]
fn seeded_runs_are_reproducible_and_snapshot_the_merged_config() {
    let f = fixture();
    let a = run(&f, "a", &["run-3dsr", "--set", "denoiser.hallucination_strength=0.2", "--set", "steps=1"]);
    let b = run(&f, "b", &["run-3dsr", "--set", "denoiser.hallucination_strength=0.2", "--set", "steps=1"]);
    let read = |p: PathBuf| std::fs::read(p).unwrap();
    assert_eq!(read(a.join("metrics.json")), read(b.join("metrics.json")));
    assert_eq!(read(a.join("scene_final.ckpt")), read(b.join("scene_final.ckpt")));

    let snap: serde_json::Value = serde_json::from_slice(&read(a.join("config.json"))).unwrap();
    assert_eq!(snap["steps"], 1, "override beats file");
    assert_eq!(snap["fit_iterations_per_step"], 5, "file beats default");
    assert_eq!(snap["seed"], 7);
    assert_eq!(snap["denoiser"]["hallucination_strength"], 0.2);
    assert_eq!(snap["lambda"], 1.0, "defaults filled in");

    let c = run_seeded(&f, "c", "8", &["run-3dsr", "--set", "denoiser.hallucination_strength=0.2", "--set", "steps=1"]);
    assert_ne!(read(a.join("scene_final.ckpt")), read(c.join("scene_final.ckpt")));
}

#[test]
fn evaluate_reproduces_the_run_metrics() {
    let f = fixture();
    let r = run(&f, "r", &["run-baseline", "--kind", "bicubic"]);
    let eval_dir = f.root.join("eval");
    ok(&["evaluate", "--run", s(&r), "--out", s(&eval_dir)]);
    let original = std::fs::read(r.join("metrics.json")).unwrap();
    assert_eq!(std::fs::read(eval_dir.join("metrics.json")).unwrap(), original);
    let csv = std::fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("view,psnr,ssim"));
    assert_eq!(csv.lines().count(), 1 + 2, "header plus two test views");
}

#[test]
fn render_grid_layout_and_content() {
    let f = fixture();
    let sr = run(&f, "sr", &["run-3dsr"]);
    let base = run(&f, "base", &["run-baseline", "--kind", "perview"]);
    let png = f.root.join("grid.png");
    ok(&["render-grid", "--run", s(&sr), "--baseline", s(&base), "--out", s(&png)]);
    let grid = Image::load_png(&png).unwrap();
    let header = 7;
    assert_eq!((grid.width(), grid.height()), (4 * 16, header + 2 * 16), "4 columns x 2 test views");

    // views 0 and 4 are the test views; sample patches of each source
    let views = splatsr::data::load_dataset(&f.data).unwrap();
    let sources = |v: usize| {
        vec![
            views.views[v].lr.upsample_bicubic(2).clamp01(),
            Image::load_png(base.join(format!("final/view_{v:03}.png"))).unwrap(),
            Image::load_png(sr.join(format!("final/view_{v:03}.png"))).unwrap(),
            views.views[v].hr.clone().unwrap(),
        ]
    };
    for (row, v) in [0usize, 4].into_iter().enumerate() {
        for (col, src) in sources(v).iter().enumerate() {
            for (x, y) in [(0, 0), (5, 9), (15, 15), (8, 3)] {
                for c in 0..3 {
                    let got = grid.get(col * 16 + x, header + row * 16 + y, c);
                    assert!((got - (src.get(x, y, c) * 255.0).round() / 255.0).abs() < 1e-9, "row {row} col {col}");
                }
            }
        }
    }

    let pick = f.root.join("pick.png");
    ok(&["render-grid", "--run", s(&sr), "--baseline", s(&base), "--views", "1,2,3", "--out", s(&pick)]);
    assert_eq!(Image::load_png(&pick).unwrap().height(), header + 3 * 16);

    // a dataset copy without HR images drops the GT column with a note
    let lr_only = f.root.join("lr_only");
    std::fs::create_dir_all(lr_only.join("images_lr")).unwrap();
    std::fs::copy(f.data.join("poses.json"), lr_only.join("poses.json")).unwrap();
    for e in std::fs::read_dir(f.data.join("images_lr")).unwrap() {
        let p = e.unwrap().path();
        std::fs::copy(&p, lr_only.join("images_lr").join(p.file_name().unwrap())).unwrap();
    }
    let no_gt = f.root.join("no_gt.png");
    let out = ok(&["render-grid", "--run", s(&sr), "--baseline", s(&base), "--data", s(&lr_only), "--out", s(&no_gt)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("GT column omitted"));
    assert_eq!(Image::load_png(&no_gt).unwrap().width(), 3 * 16);
    let layout: serde_json::Value = serde_json::from_slice(&std::fs::read(f.root.join("no_gt.json")).unwrap()).unwrap();
    assert_eq!(layout["columns"], serde_json::json!(["LR", "BASE", "3DSR"]));

    // missing renders are listed
    std::fs::remove_file(base.join("final/view_004.png")).unwrap();
    std::fs::remove_file(sr.join("final/view_000.png")).unwrap();
    let out = splatsr(&["render-grid", "--run", s(&sr), "--baseline", s(&base), "--out", s(&png)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error[data]: ") && err.contains("missing artifacts"), "{err}");
    assert!(err.contains("view_004.png") && err.contains("view_000.png"), "{err}");
}
