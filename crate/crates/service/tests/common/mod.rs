#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use fieldlabel_core::field::{AnalyticField, Primitive, RayMarchConfig};
use fieldlabel_core::geometry::{Aabb, OrientedBox, RigidTransform, Vec3};
use fieldlabel_core::labeling::{save_project, Edit, LabelObject, LabelProject, MeshLibrary};
use fieldlabel_core::mesh::{save_obj, TriMesh};
use fieldlabel_core::scene::{save_transforms, CameraIntrinsics, CameraPose, Frame, SceneDescription};
use fieldlabel_service::api::SharedSession;
use fieldlabel_service::session::{Session, SessionOptions};
use nalgebra::{Matrix3, UnitQuaternion};

pub const CRATE_HALF: [f64; 3] = [0.1, 0.08, 0.06];

pub fn crate_pose() -> RigidTransform {
    RigidTransform::new(UnitQuaternion::from_euler_angles(0.0, 0.0, 0.3), Vec3::new(0.25, 0.0, 0.0))
}

pub fn ball_center() -> Vec3 {
    Vec3::new(-0.25, 0.0, 0.0)
}

/// Camera at `eye` looking at `target`, world +Z up.
pub fn look_at(eye: Vec3, target: Vec3) -> CameraPose {
    let z = -(target - eye).normalize();
    let x = Vec3::z().cross(&z).normalize();
    let y = z.cross(&x);
    CameraPose {
        rotation: Matrix3::from_columns(&[x, y, z]),
        translation: eye,
    }
}

/// Four cameras around the origin.
pub fn scene(width: u32, height: u32) -> SceneDescription {
    let f = width as f64 / 2.0 / (30f64.to_radians()).tan();
    let k = CameraIntrinsics {
        fx: f,
        fy: f,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
    };
    let frames = (0..4)
        .map(|i| {
            let a = i as f64 / 4.0 * std::f64::consts::TAU + 0.4;
            let eye = Vec3::new(1.2 * a.cos(), 1.2 * a.sin(), 0.6);
            Frame {
                index: i,
                image_path: format!("images/{i:06}.png"),
                intrinsics: k,
                pose: look_at(eye, Vec3::zeros()),
                sensor_depth_path: None,
            }
        })
        .collect();
    SceneDescription::new(frames, Some(Aabb::new(Vec3::repeat(-0.6), Vec3::repeat(0.6)))).unwrap()
}

/// A rotated crate and a ball.
pub fn field() -> AnalyticField {
    AnalyticField::new(vec![
        Primitive::Box {
            obb: OrientedBox::new(crate_pose(), Vec3::from(CRATE_HALF)).unwrap(),
            sigma: 400.0,
            rgb: Some([0.8, 0.5, 0.2]),
        },
        Primitive::Sphere {
            center: ball_center(),
            radius: 0.12,
            sigma: 400.0,
            rgb: Some([0.2, 0.4, 0.9]),
        },
    ])
    .unwrap()
}

/// Crate as a mesh label slightly off its true pose, ball as a loose box.
pub fn project(crate_offset: &RigidTransform) -> LabelProject {
    let mut p = LabelProject::new("scene.json");
    for o in [
        LabelObject::new_mesh(1, "crate", crate_offset.compose(&crate_pose()), "crate.obj", 1.0),
        LabelObject::new_box(2, "ball", RigidTransform::from_translation(ball_center()), Vec3::repeat(0.2)),
    ] {
        p = p.apply(&Edit::Add { object: o, index: None }).unwrap().0;
    }
    p
}

pub fn small_offset() -> RigidTransform {
    RigidTransform::new(UnitQuaternion::from_euler_angles(0.0, 0.0, 0.04), Vec3::new(0.015, -0.01, 0.005))
}

pub fn session(mesh_dir: &Path) -> SharedSession {
    let scene = scene(96, 72);
    let mut meshes = MeshLibrary::new(mesh_dir);
    meshes.insert("crate.obj", TriMesh::cuboid(&Vec3::from(CRATE_HALF)));
    let options = SessionOptions {
        march: RayMarchConfig::for_bounds(&scene.aabb),
        preview_long_edge: 96,
        mesh_dir: Some(mesh_dir.to_path_buf()),
        seed: 0,
    };
    let s = Session::new(scene, Arc::new(field()), project(&small_offset()), meshes, options).unwrap();
    Arc::new(RwLock::new(s))
}

/// Scene, field, mesh and project files for the command-line tests.
pub struct OnDisk {
    pub scene: PathBuf,
    pub field: PathBuf,
    pub project: PathBuf,
}

pub fn write_inputs(dir: &Path) -> OnDisk {
    let scene_path = dir.join("scene.json");
    save_transforms(&scene(64, 48), &scene_path).unwrap();
    let field_path = dir.join("field.json");
    field().save(&field_path).unwrap();
    save_obj(&TriMesh::cuboid(&Vec3::from(CRATE_HALF)), &dir.join("crate.obj")).unwrap();
    let project_path = dir.join("project.json");
    save_project(&project(&small_offset()), &project_path).unwrap();
    OnDisk {
        scene: scene_path,
        field: field_path,
        project: project_path,
    }
}
