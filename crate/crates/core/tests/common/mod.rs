#![allow(dead_code)]

use std::path::Path;

use fieldlabel_core::field::{AnalyticField, Primitive};
use fieldlabel_core::geometry::{Aabb, OrientedBox, RigidTransform, Vec3};
use fieldlabel_core::scene::{CameraIntrinsics, CameraPose, Frame, SceneDescription};
use nalgebra::{Matrix3, UnitQuaternion};

pub fn intrinsics(width: u32, height: u32, fov_x_deg: f64) -> CameraIntrinsics {
    let f = width as f64 / 2.0 / (fov_x_deg.to_radians() / 2.0).tan();
    CameraIntrinsics {
        fx: f,
        fy: f,
        cx: width as f64 / 2.0,
        cy: height as f64 / 2.0,
        width,
        height,
    }
}

/// Camera at `eye` looking at `target`, world +Z up.
pub fn look_at(eye: Vec3, target: Vec3) -> CameraPose {
    let forward = (target - eye).normalize();
    let z = -forward;
    let up = if z.z.abs() > 0.99 { Vec3::y() } else { Vec3::z() };
    let x = up.cross(&z).normalize();
    let y = z.cross(&x);
    CameraPose {
        rotation: Matrix3::from_columns(&[x, y, z]),
        translation: eye,
    }
}

pub fn frame(index: usize, k: CameraIntrinsics, pose: CameraPose) -> Frame {
    Frame {
        index,
        image_path: format!("images/{index:06}.png"),
        intrinsics: k,
        pose,
        sensor_depth_path: None,
    }
}

/// `n` cameras on a ring of `radius` at height `z`, all looking at `target`.
pub fn ring_scene(n: usize, radius: f64, z: f64, target: Vec3, k: CameraIntrinsics, aabb: Aabb) -> SceneDescription {
    let frames = (0..n)
        .map(|i| {
            let a = i as f64 / n as f64 * std::f64::consts::TAU;
            let eye = Vec3::new(radius * a.cos(), radius * a.sin(), z);
            frame(i, k, look_at(eye, target))
        })
        .collect();
    SceneDescription::new(frames, Some(aabb)).unwrap()
}

pub fn sphere(center: Vec3, radius: f64, sigma: f64) -> Primitive {
    Primitive::Sphere { center, radius, sigma, rgb: None }
}

pub fn cuboid(pose: RigidTransform, half_extents: Vec3, sigma: f64) -> Primitive {
    Primitive::Box {
        obb: OrientedBox::new(pose, half_extents).unwrap(),
        sigma,
        rgb: None,
    }
}

pub fn field(primitives: Vec<Primitive>) -> AnalyticField {
    AnalyticField::new(primitives).unwrap()
}

pub fn pose(roll: f64, pitch: f64, yaw: f64, t: Vec3) -> RigidTransform {
    RigidTransform::new(UnitQuaternion::from_euler_angles(roll, pitch, yaw), t)
}

/// Every file under `root`, relative path plus contents, sorted by path.
pub fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
