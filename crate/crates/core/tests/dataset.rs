mod common;

use std::fs;

use splatsr::data::{load_dataset, save_dataset, Split};
use splatsr::Error;

#[test]
fn save_then_load_round_trips() {
    let vs = common::tiny_views();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&vs, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), vs.len());
    assert_eq!(back.sr_factor, vs.sr_factor);
    assert_eq!(back.test_indices(), vs.test_indices());
    assert_eq!(back.views[1].split, Split::Train);
    for (a, b) in vs.views.iter().zip(&back.views) {
        // images pass through 8-bit PNG
        assert!(a.lr.mean_abs_diff(&b.lr).unwrap() < 1.0 / 255.0);
        assert!(a.hr.as_ref().unwrap().mean_abs_diff(b.hr.as_ref().unwrap()).unwrap() < 1.0 / 255.0);
        assert_eq!((a.camera.width, a.camera.height), (b.camera.width, b.camera.height));
        assert!((a.camera.rotation - b.camera.rotation).abs().max() < 1e-12);
        assert!((a.camera.fx - b.camera.fx).abs() < 1e-12);
    }
    // the digest covers the quantized images, so a second save is stable
    let dir2 = tempfile::tempdir().unwrap();
    save_dataset(&back, dir2.path()).unwrap();
    assert_eq!(load_dataset(dir2.path()).unwrap().digest(), back.digest());
}

#[test]
fn missing_poses_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Parse { .. })));
}

#[test]
fn malformed_poses_report_position() {
    let vs = common::tiny_views();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&vs, dir.path()).unwrap();
    fs::write(dir.path().join("poses.json"), "{\n  \"sr_factor\": 2,\n  \"views\": [ oops ]\n}").unwrap();
    match load_dataset(dir.path()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn image_count_mismatch_is_a_data_error() {
    let vs = common::tiny_views();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&vs, dir.path()).unwrap();
    let extra = dir.path().join("images_lr").join("view_999.png");
    vs.views[0].lr.save_png(&extra).unwrap();
    assert!(matches!(load_dataset(dir.path()), Err(Error::Data(_))));
}
