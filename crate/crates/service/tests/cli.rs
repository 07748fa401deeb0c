mod common;

use std::path::Path;
use std::process::{Command, Output};

use fieldlabel_core::geometry::Vec3;
use fieldlabel_core::labeling::load_project;
use fieldlabel_core::mesh::load_obj;
use fieldlabel_core::raster::{encode_png_u16, Raster};
use fieldlabel_core::scene::{load_scene, SceneFormat};
use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fieldlabel"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok_json(out: Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn extract_mesh_from_a_box() {
    let dir = tempfile::tempdir().unwrap();
    common::write_inputs(dir.path());
    let v = ok_json(run(
        dir.path(),
        &["extract-mesh", "--field", "field.json", "--box", "c=-0.25,0,0;h=0.2,0.2,0.2", "--resolution", "64", "--out", "ball.obj"],
    ));
    assert_eq!(v["closed"], true);
    let mesh = load_obj(&dir.path().join("ball.obj")).unwrap();
    let c = common::ball_center();
    for p in &mesh.vertices {
        let r = (p - c).norm();
        assert!((r - 0.12).abs() < 0.4 / 64.0 * 1.5, "vertex radius {r}");
    }

    ok_json(run(
        dir.path(),
        &[
            "extract-mesh", "--field", "field.json", "--box", "c=-0.25,0,0;h=0.2,0.2,0.2;q=1,0,0,0",
            "--resolution", "32", "--object-frame", "--out", "local.obj",
        ],
    ));
    let local = load_obj(&dir.path().join("local.obj")).unwrap();
    assert!(local.bounds().center().norm() < 0.01, "object-frame mesh is centered on the box");
}

#[test]
fn tight_fit_then_icp_then_export() {
    let dir = tempfile::tempdir().unwrap();
    let files = common::write_inputs(dir.path());

    let v = ok_json(run(dir.path(), &["tight-fit", "--project", "project.json", "--id", "2", "--field", "field.json"]));
    let half: Vec3 = serde_json::from_value(v["object"]["half_extents"].clone()).unwrap();
    assert!(half.iter().all(|h| (0.115..0.135).contains(h)), "{half:?}");

    let before = load_project(&files.project).unwrap().object(1).unwrap().pose;
    let v = ok_json(run(
        dir.path(),
        &["icp", "--project", "project.json", "--id", "1", "--field", "field.json", "--out", "refined.json"],
    ));
    assert!(v["iterations"].as_u64().unwrap() >= 1);
    let after = load_project(&dir.path().join("refined.json")).unwrap().object(1).unwrap().pose;
    let truth = common::crate_pose();
    assert!((after.translation() - truth.translation()).norm() < (before.translation() - truth.translation()).norm());

    let v = ok_json(run(dir.path(), &["export", "--project", "refined.json", "--field", "field.json", "--out", "out"]));
    assert_eq!((v["frames"].as_u64(), v["objects"].as_u64()), (Some(4), Some(2)));
    assert!(dir.path().join("out/mask_instance/000003.png").is_file());
    assert!(dir.path().join("out/annotations/000000.json").is_file());

    // the same inputs give the same files
    ok_json(run(dir.path(), &["export", "--project", "refined.json", "--field", "field.json", "--out", "again"]));
    for name in ["depth/000002.png", "mask_class/000001.png", "annotations/000003.json", "classes.json"] {
        let a = std::fs::read(dir.path().join("out").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("again").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn ingest_and_calibrate() {
    let dir = tempfile::tempdir().unwrap();
    common::write_inputs(dir.path());
    std::fs::create_dir(dir.path().join("work")).unwrap();
    let v = ok_json(run(dir.path(), &["ingest", "--scene", "scene.json", "--out", "work/ingested.json"]));
    assert_eq!(v["frames"], 4);
    let ingested = load_scene(&dir.path().join("work/ingested.json"), SceneFormat::TransformsJson).unwrap().scene;
    // frame paths still point at the original files
    assert_eq!(
        ingested.resolve(&ingested.frames[0].image_path),
        dir.path().canonicalize().unwrap().join("images/000000.png")
    );

    let v = ok_json(run(
        dir.path(),
        &["calibrate", "--scene", "scene.json", "--p1", "0,0,0", "--p2", "0,0,0.5", "--distance", "2", "--out", "metric.json"],
    ));
    assert_eq!(v["scale"], 4.0);
    let metric = load_scene(&dir.path().join("metric.json"), SceneFormat::TransformsJson).unwrap().scene;
    let original = common::scene(64, 48);
    let d = metric.frames[1].pose.translation - original.frames[1].pose.translation * 4.0;
    assert!(d.norm() < 1e-9);
}

#[test]
fn eval_depth_and_masks() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for sub in ["pred", "gt"] {
        std::fs::create_dir(d.join(sub)).unwrap();
    }
    // gt 1 m everywhere except one missing pixel; prediction off by 10 cm on half the image
    let gt = Raster::from_fn(4, 2, |x, y| if (x, y) == (0, 0) { 0u16 } else { 1000 });
    let pred = Raster::from_fn(4, 2, |x, _| if x < 2 { 1100u16 } else { 1000 });
    std::fs::write(d.join("gt/a.png"), encode_png_u16(&gt)).unwrap();
    std::fs::write(d.join("pred/a.png"), encode_png_u16(&pred)).unwrap();
    let v = ok_json(run(d, &["eval", "--pred", "pred", "--gt", "gt"]));
    assert_eq!(v["pixels"], 7);
    let rmse = v["rmse"].as_f64().unwrap();
    assert!((rmse - (3.0 * 0.01f64 / 7.0).sqrt()).abs() < 1e-9, "{rmse}");
    assert!((v["delta_1.05"].as_f64().unwrap() - 4.0 / 7.0).abs() < 1e-12);

    let table = run(d, &["eval", "--pred", "pred", "--gt", "gt", "--output", "table"]);
    assert!(table.status.success());
    assert!(String::from_utf8_lossy(&table.stdout).contains("RMSE"));

    let gt_mask = Raster::from_vec(2, 2, vec![0u16, 1, 1, 2]);
    let pred_mask = Raster::from_vec(2, 2, vec![0u16, 1, 2, 2]);
    std::fs::write(d.join("gt/m.png"), encode_png_u16(&gt_mask)).unwrap();
    std::fs::write(d.join("pred/m.png"), encode_png_u16(&pred_mask)).unwrap();
    let v = ok_json(run(d, &["eval", "--pred", "pred/m.png", "--gt", "gt/m.png", "--segmentation", "binary"]));
    assert_eq!(v["iou"], 1.0);
    let v = ok_json(run(d, &["eval", "--pred", "pred/m.png", "--gt", "gt/m.png", "--segmentation", "category"]));
    // class 1: iou 1/2, class 2: iou 1/2
    assert!((v["iou"].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn errors_are_one_json_line_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    common::write_inputs(dir.path());
    let out = run(dir.path(), &["tight-fit", "--project", "project.json", "--id", "9", "--field", "field.json"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    let v: Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(v["error"], "not_found");
    assert!(out.stdout.is_empty());

    let out = run(dir.path(), &["export", "--project", "project.json", "--out", "o"]);
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"], "export", "field occlusion without a field");

    let out = run(dir.path(), &["extract-mesh", "--field", "nope.json", "--box", "c=0,0,0;h=1,1,1", "--out", "x.obj"]);
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"], "field");
}

#[test]
fn malformed_box_argument_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["extract-mesh", "--field", "f.json", "--box", "c=0,0;h=1,1,1", "--out", "x.obj"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expected 3"));
}

#[test]
fn extract_mesh_matches_the_sphere_oracle() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("sphere.json"),
        r#"{"primitives":[{"type":"sphere","center":[0,0,0],"radius":0.3,"sigma":50}]}"#,
    )
    .unwrap();
    let v = ok_json(run(
        dir.path(),
        &[
            "extract-mesh", "--field", "sphere.json", "--box", "c=0,0,0;h=0.5,0.5,0.5;q=1,0,0,0", "--tau", "25",
            "--resolution", "128", "--out", "sphere.obj",
        ],
    ));
    assert_eq!(v["closed"], true);
    let mesh = load_obj(&dir.path().join("sphere.obj")).unwrap();
    assert_eq!(mesh.components().len(), 1);
    let cell = 1.0 / 128.0;
    let worst = mesh.vertices.iter().map(|p| (p.norm() - 0.3).abs()).fold(0.0, f64::max);
    assert!(worst <= 1.5 * cell, "max radial error {worst}");
}
