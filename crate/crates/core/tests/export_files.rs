mod common;

use common::*;
use fieldlabel_core::export::{
    export_scene, ExportConfig, ExportError, FrameAnnotation, OcclusionConfig, OcclusionMode, LAYOUT_DIRS,
};
use fieldlabel_core::field::RayMarchConfig;
use fieldlabel_core::geometry::{Aabb, Vec3};
use fieldlabel_core::labeling::{Edit, LabelObject, LabelProject, MeshLibrary};
use fieldlabel_core::mesh::{load_obj, TriMesh};
use fieldlabel_core::raster::{encode_png_u16, read_png_u16, Raster};
use fieldlabel_core::scene::SceneDescription;

fn setup(dir: &std::path::Path, with_sensor: bool) -> (LabelProject, MeshLibrary, SceneDescription) {
    let aabb = Aabb::new(Vec3::repeat(-1.0), Vec3::repeat(1.0));
    let mut scene = ring_scene(2, 1.5, 0.4, Vec3::zeros(), intrinsics(40, 30, 60.0), aabb);
    scene.root = dir.to_path_buf();
    if with_sensor {
        for f in &mut scene.frames {
            let rel = format!("sensor_{:06}.png", f.index);
            // far background everywhere, one missing column
            let mm = Raster::from_fn(40, 30, |x, _| if x == 0 { 0u16 } else { 2500 });
            std::fs::write(dir.join(&rel), encode_png_u16(&mm)).unwrap();
            f.sensor_depth_path = Some(rel);
        }
    }
    let mut meshes = MeshLibrary::new(dir);
    meshes.insert("block.obj", TriMesh::cuboid(&Vec3::new(0.1, 0.1, 0.1)));
    let mut project = LabelProject::new("scene.json");
    for o in [
        LabelObject::new_mesh(1, "block", pose(0.0, 0.0, 0.2, Vec3::new(0.0, 0.0, 0.0)), "block.obj", 1.5),
        LabelObject::new_box(2, "crate", pose(0.0, 0.0, 0.0, Vec3::new(0.3, 0.3, 0.0)), Vec3::new(0.08, 0.05, 0.1)),
        LabelObject::new_box(3, "block", pose(0.0, 0.0, 0.0, Vec3::new(5.0, 5.0, 5.0)), Vec3::repeat(0.1)),
    ] {
        project = project.apply(&Edit::Add { object: o, index: None }).unwrap().0;
    }
    (project, meshes, scene)
}

fn config(mode: OcclusionMode, aabb: &Aabb) -> ExportConfig {
    ExportConfig {
        occlusion: OcclusionConfig { mode, epsilon: 0.01 },
        march: RayMarchConfig::for_bounds(aabb),
    }
}

#[test]
fn layout_and_annotations() {
    let dir = tempfile::tempdir().unwrap();
    let (project, meshes, scene) = setup(dir.path(), true);
    let out = dir.path().join("out");
    let summary = export_scene(&project, &meshes, None, &scene, &config(OcclusionMode::Sensor, &scene.aabb), &out).unwrap();
    assert_eq!(summary.frames, 2);
    assert_eq!(summary.objects, 3);
    for d in LAYOUT_DIRS {
        assert!(out.join(d).is_dir(), "{d}");
    }
    for name in ["000000.png", "000001.png"] {
        for d in ["depth", "combined_depth", "mask_binary", "mask_instance", "mask_class"] {
            assert!(out.join(d).join(name).is_file(), "{d}/{name}");
        }
    }
    let classes: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("classes.json")).unwrap()).unwrap();
    let names: Vec<&str> = classes["classes"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["block", "crate"]);

    let mesh = load_obj(&out.join("meshes/000001.obj")).unwrap();
    let b = mesh.bounds();
    assert!((b.max - Vec3::repeat(0.15)).amax() < 1e-8, "exported mesh carries the label scale");

    let ann: FrameAnnotation =
        serde_json::from_str(&std::fs::read_to_string(out.join("annotations/000000.json")).unwrap()).unwrap();
    assert_eq!((ann.width, ann.height, ann.objects.len()), (40, 30, 3));
    let block = &ann.objects[0];
    assert_eq!((block.class_name.as_str(), block.class_id), ("block", 1));
    assert!(block.visible_pixels > 0);
    let modal = block.box2d_modal.unwrap();
    let amodal = block.box2d_amodal.unwrap();
    assert!(amodal[0] <= modal[0] && amodal[1] <= modal[1] && amodal[2] >= modal[2] && amodal[3] >= modal[3]);
    let half = block.box3d.as_ref().unwrap().half_extents;
    assert!((half - Vec3::repeat(0.15)).amax() < 1e-12);
    // off-screen label: no pixels, no 2D boxes
    let far = &ann.objects[2];
    assert_eq!((far.visible_pixels, far.box2d_modal, far.box2d_amodal), (0, None, None));

    let depth = read_png_u16(&out.join("depth/000000.png")).unwrap();
    let combined = read_png_u16(&out.join("combined_depth/000000.png")).unwrap();
    let instance = read_png_u16(&out.join("mask_instance/000000.png")).unwrap();
    for i in 0..depth.data().len() {
        let (d, c) = (depth.data()[i], combined.data()[i]);
        if d > 0 {
            // sensor background lies behind every object
            assert_eq!(c, d);
            assert!(instance.data()[i] > 0);
        } else if i % 40 != 0 {
            assert_eq!(c, 2500);
        }
    }
}

#[test]
fn sensor_mode_requires_sensor_depth() {
    let dir = tempfile::tempdir().unwrap();
    let (project, meshes, scene) = setup(dir.path(), false);
    let err = export_scene(&project, &meshes, None, &scene, &config(OcclusionMode::Sensor, &scene.aabb), &dir.path().join("o"))
        .unwrap_err();
    assert!(matches!(err, ExportError::MissingSensorDepth { frame: 0 } | ExportError::MissingSensorDepth { frame: 1 }));
}

#[test]
fn field_mode_requires_a_field() {
    let dir = tempfile::tempdir().unwrap();
    let (project, meshes, scene) = setup(dir.path(), false);
    let err = export_scene(&project, &meshes, None, &scene, &config(OcclusionMode::Field, &scene.aabb), &dir.path().join("o"))
        .unwrap_err();
    assert!(matches!(err, ExportError::MissingField { .. }));
}

#[test]
fn field_occluder_hides_objects_behind_it() {
    let dir = tempfile::tempdir().unwrap();
    let (project, meshes, scene) = setup(dir.path(), false);
    // a wall between every camera and the labels
    let wall = field(vec![sphere(Vec3::zeros(), 1.0, 500.0)]);
    let out = dir.path().join("o");
    export_scene(&project, &meshes, Some(&wall), &scene, &config(OcclusionMode::Field, &scene.aabb), &out).unwrap();
    let binary = read_png_u16(&out.join("mask_binary/000000.png")).unwrap();
    assert!(binary.data().iter().all(|&v| v == 0));
    let depth = read_png_u16(&out.join("depth/000000.png")).unwrap();
    assert!(depth.data().iter().any(|&v| v > 0), "depth is exported regardless of occlusion");
    assert!(!out.join("combined_depth/000000.png").exists());
}
