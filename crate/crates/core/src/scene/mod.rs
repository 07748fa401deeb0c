//! Posed camera scenes: intrinsics, camera-to-world poses and metric scale.
//!
//! Internally every camera is camera-to-world with the OpenGL axis convention:
//! the camera looks down -Z, +X is right and +Y is up. Pixel coordinates are
//! continuous with the origin at the top-left image corner, so the center of
//! pixel `(i, j)` sits at `(i + 0.5, j + 0.5)`.

mod colmap;
mod transforms;

use std::path::{Path, PathBuf};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, RigidTransform, Vec3};

pub use transforms::save_transforms;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}:{line}: {message}")]
    ParseLine {
        path: String,
        line: usize,
        message: String,
    },
    #[error("missing image entries: {}", .0.join(", "))]
    MissingImages(Vec<String>),
    #[error("camera {camera_id} uses model {model} with non-zero distortion coefficients; undistort the images first")]
    Distortion { camera_id: u32, model: String },
    #[error("invalid intrinsics for frame {frame}: {message}")]
    InvalidIntrinsics { frame: usize, message: String },
    #[error("calibration points coincide")]
    CoincidentPoints,
    #[error("real distance must be positive, got {0}")]
    InvalidDistance(f64),
    #[error("depth must be positive, got {0}")]
    InvalidDepth(f64),
    #[error("pixel ({0}, {1}) is outside the image")]
    PixelOutOfBounds(f64, f64),
    #[error("scene has no frames")]
    NoFrames,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(format!("focal lengths must be positive ({}, {})", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return Err("image size must be non-zero".into());
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(format!("cx={} outside [0, {})", self.cx, self.width));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(format!("cy={} outside [0, {})", self.cy, self.height));
        }
        Ok(())
    }

    /// Intrinsics for the same camera rendered at a different resolution.
    pub fn scaled_to(&self, width: u32, height: u32) -> CameraIntrinsics {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        CameraIntrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
        }
    }
}

/// Camera-to-world rotation and translation (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_transform(t: &RigidTransform) -> Self {
        Self {
            rotation: t.rotation_matrix(),
            translation: t.translation(),
        }
    }

    pub fn to_transform(&self) -> RigidTransform {
        RigidTransform::from_matrix_parts(&self.rotation, self.translation)
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn camera_to_world(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Unit optical axis (camera -Z) in world coordinates.
    pub fn forward(&self) -> Vec3 {
        -self.rotation.column(2).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub index: usize,
    pub image_path: String,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor_depth_path: Option<String>,
}

impl Frame {
    pub fn width(&self) -> usize {
        self.intrinsics.width as usize
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height as usize
    }

    /// Ray through continuous pixel `(u, v)`. The direction is scaled so its
    /// camera-frame z component is exactly -1: the ray parameter equals z-depth.
    pub fn pixel_ray(&self, u: f64, v: f64) -> (Vec3, Vec3) {
        let k = &self.intrinsics;
        let d_cam = Vec3::new((u - k.cx) / k.fx, -(v - k.cy) / k.fy, -1.0);
        (self.pose.translation, self.pose.rotation * d_cam)
    }

    /// Ray through the center of pixel `(x, y)`.
    pub fn pixel_center_ray(&self, x: usize, y: usize) -> (Vec3, Vec3) {
        self.pixel_ray(x as f64 + 0.5, y as f64 + 0.5)
    }

    /// Same camera at a lower resolution (long edge clamp); no-op when already smaller.
    pub fn downscaled(&self, long_edge: u32) -> Frame {
        let k = self.intrinsics;
        let long = k.width.max(k.height);
        if long <= long_edge || long_edge == 0 {
            return self.clone();
        }
        let s = long_edge as f64 / long as f64;
        let w = ((k.width as f64 * s).round() as u32).max(1);
        let h = ((k.height as f64 * s).round() as u32).max(1);
        Frame {
            intrinsics: k.scaled_to(w, h),
            ..self.clone()
        }
    }
}

/// Pinhole projection. Returns `(u, v, z_depth)`, absent behind the camera.
pub fn project(frame: &Frame, world_point: &Vec3) -> Option<(f64, f64, f64)> {
    let pc = frame.pose.world_to_camera(world_point);
    let depth = -pc.z;
    if depth <= 0.0 {
        return None;
    }
    let k = &frame.intrinsics;
    Some((k.cx + k.fx * pc.x / depth, k.cy - k.fy * pc.y / depth, depth))
}

/// Inverse of [`project`]: the world point at camera-frame depth `z_depth`
/// that projects to `pixel`.
pub fn back_project(frame: &Frame, pixel: (f64, f64), z_depth: f64) -> Result<Vec3, SceneError> {
    if !(z_depth > 0.0) {
        return Err(SceneError::InvalidDepth(z_depth));
    }
    let (u, v) = pixel;
    let k = &frame.intrinsics;
    if !(u >= 0.0 && v >= 0.0 && u <= k.width as f64 && v <= k.height as f64) {
        return Err(SceneError::PixelOutOfBounds(u, v));
    }
    let pc = Vec3::new(
        (u - k.cx) * z_depth / k.fx,
        -(v - k.cy) * z_depth / k.fy,
        -z_depth,
    );
    Ok(frame.pose.camera_to_world(&pc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneFormat {
    TransformsJson,
    ColmapText,
}

impl std::str::FromStr for SceneFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "transforms-json" | "transforms" => Ok(Self::TransformsJson),
            "colmap-text" | "colmap" => Ok(Self::ColmapText),
            other => Err(format!("unknown scene format '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub frames: Vec<Frame>,
    /// Cumulative metric scale applied to the source translations.
    pub scale: f64,
    pub aabb: Aabb,
    /// Directory relative paths in frames resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

/// A loaded scene plus non-fatal issues found while loading.
#[derive(Debug, Clone)]
pub struct SceneLoad {
    pub scene: SceneDescription,
    pub warnings: Vec<String>,
}

impl SceneDescription {
    pub fn new(frames: Vec<Frame>, aabb: Option<Aabb>) -> Result<Self, SceneError> {
        if frames.is_empty() {
            return Err(SceneError::NoFrames);
        }
        for f in &frames {
            f.intrinsics
                .validate()
                .map_err(|message| SceneError::InvalidIntrinsics {
                    frame: f.index,
                    message,
                })?;
        }
        let aabb = aabb.unwrap_or_else(|| default_aabb(&frames));
        Ok(Self {
            frames,
            scale: 1.0,
            aabb,
            root: PathBuf::new(),
        })
    }

    pub fn frame(&self, index: usize) -> Option<&Frame> {
        self.frames.get(index)
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    /// Lists frames whose image file is not present under `root`.
    pub fn verify_images(&self) -> Result<(), SceneError> {
        let missing: Vec<String> = self
            .frames
            .iter()
            .filter(|f| !self.resolve(&f.image_path).is_file())
            .map(|f| f.image_path.clone())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(SceneError::MissingImages(missing))
        }
    }
}

/// Bounds of the camera centers, padded by half their extent (at least 1 m).
fn default_aabb(frames: &[Frame]) -> Aabb {
    let b = Aabb::from_points(frames.iter().map(|f| &f.pose.translation));
    let pad = (b.extent().max() * 0.5).max(1.0);
    Aabb::new(b.min - Vec3::repeat(pad), b.max + Vec3::repeat(pad))
}

pub fn load_scene(path: &Path, format: SceneFormat) -> Result<SceneLoad, SceneError> {
    match format {
        SceneFormat::TransformsJson => transforms::load_transforms(path),
        SceneFormat::ColmapText => colmap::load_colmap_text(path),
    }
}

/// Rescales camera translations (and the scene bounds) so that `p1`-`p2`
/// measures `real_distance` meters.
pub fn calibrate_scale(
    scene: &SceneDescription,
    p1: &Vec3,
    p2: &Vec3,
    real_distance: f64,
) -> Result<SceneDescription, SceneError> {
    if !(real_distance > 0.0) || !real_distance.is_finite() {
        return Err(SceneError::InvalidDistance(real_distance));
    }
    let measured = (p1 - p2).norm();
    if !(measured > 0.0) {
        return Err(SceneError::CoincidentPoints);
    }
    Ok(apply_scale(scene, real_distance / measured))
}

pub fn apply_scale(scene: &SceneDescription, s: f64) -> SceneDescription {
    let mut out = scene.clone();
    for f in &mut out.frames {
        f.pose.translation *= s;
    }
    out.aabb = Aabb::new(scene.aabb.min * s, scene.aabb.max * s);
    out.scale *= s;
    out
}

/// Re-orthonormalizes `rot` if needed, recording a warning.
fn sanitize_rotation(rot: Matrix3<f64>, context: &str, warnings: &mut Vec<String>) -> Matrix3<f64> {
    let defect = crate::geometry::rotation_defect(&rot);
    if defect > 1e-6 {
        let msg = format!("{context}: rotation not orthonormal (defect {defect:.3e}), projected to nearest rotation");
        log::warn!("{msg}");
        warnings.push(msg);
        crate::geometry::nearest_rotation(&rot)
    } else {
        rot
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn test_frame() -> Frame {
        Frame {
            index: 0,
            image_path: "0.png".into(),
            intrinsics: CameraIntrinsics {
                fx: 100.0,
                fy: 100.0,
                cx: 160.0,
                cy: 120.0,
                width: 320,
                height: 240,
            },
            pose: CameraPose::identity(),
            sensor_depth_path: None,
        }
    }

    #[test]
    fn principal_ray_back_projection() {
        let f = test_frame();
        let p = back_project(&f, (160.0, 120.0), 1.0).unwrap();
        assert_eq!(p, Vec3::new(0.0, 0.0, -1.0));
        let p = back_project(&f, (170.0, 120.0), 1.0).unwrap();
        assert!((p.x - 0.1).abs() < 1e-15);
    }

    #[test]
    fn back_project_rejects_bad_depth() {
        let f = test_frame();
        assert!(matches!(
            back_project(&f, (1.0, 1.0), 0.0),
            Err(SceneError::InvalidDepth(_))
        ));
        assert!(back_project(&f, (-1.0, 1.0), 1.0).is_err());
    }

    #[test]
    fn projection_on_axis_and_behind() {
        let f = test_frame();
        assert_eq!(project(&f, &Vec3::new(0.0, 0.0, -1.0)), Some((160.0, 120.0, 1.0)));
        assert_eq!(project(&f, &Vec3::new(0.0, 0.0, 1.0)), None);
    }

    fn scene_with(translations: &[Vec3]) -> SceneDescription {
        let frames = translations
            .iter()
            .enumerate()
            .map(|(i, t)| Frame {
                index: i,
                pose: CameraPose {
                    rotation: Matrix3::identity(),
                    translation: *t,
                },
                ..test_frame()
            })
            .collect();
        SceneDescription::new(frames, None).unwrap()
    }

    #[test]
    fn calibration_ratio() {
        let s = scene_with(&[Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 0.0)]);
        let out = calibrate_scale(&s, &Vec3::zeros(), &Vec3::new(0.5, 0.0, 0.0), 1.0).unwrap();
        assert_eq!(out.scale, 2.0);
        assert_eq!(out.frames[0].pose.translation, Vec3::new(2.0, 4.0, 6.0));
        let same = calibrate_scale(&s, &Vec3::zeros(), &Vec3::new(0.0, 1.0, 0.0), 1.0).unwrap();
        assert_eq!(same, s);
    }

    #[test]
    fn calibration_inverse_composition() {
        let s = scene_with(&[Vec3::new(0.3, -2.0, 7.1), Vec3::new(1e-3, 4.0, -0.2)]);
        let a = calibrate_scale(&s, &Vec3::zeros(), &Vec3::new(0.5, 0.0, 0.0), 1.0).unwrap();
        let b = calibrate_scale(&a, &Vec3::zeros(), &Vec3::new(2.0, 0.0, 0.0), 1.0).unwrap();
        for (x, y) in b.frames.iter().zip(s.frames.iter()) {
            assert!((x.pose.translation - y.pose.translation).norm() < 1e-12);
        }
        assert!((b.scale - 1.0).abs() < 1e-15);
    }

    #[test]
    fn calibration_errors() {
        let s = scene_with(&[Vec3::zeros()]);
        assert!(matches!(
            calibrate_scale(&s, &Vec3::zeros(), &Vec3::zeros(), 1.0),
            Err(SceneError::CoincidentPoints)
        ));
        assert!(calibrate_scale(&s, &Vec3::zeros(), &Vec3::x(), -1.0).is_err());
    }

    fn arb_pose() -> impl Strategy<Value = CameraPose> {
        (
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(-5.0f64..5.0),
        )
            .prop_filter_map("quat", |(q, t)| {
                RigidTransform::from_wxyz(q, Vec3::from(t)).map(|t| CameraPose::from_transform(&t))
            })
    }

    proptest! {
        #[test]
        fn project_back_project_round_trip(pose in arb_pose(), u in 0.0f64..320.0, v in 0.0f64..240.0, z in 0.05f64..50.0) {
            let f = Frame { pose, ..test_frame() };
            let p = back_project(&f, (u, v), z).unwrap();
            let (pu, pv, pz) = project(&f, &p).unwrap();
            prop_assert!((pu - u).abs() < 1e-9 && (pv - v).abs() < 1e-9);
            prop_assert!((pz - z).abs() < 1e-9 * z.max(1.0));
        }

        #[test]
        fn scale_equivariance(ts in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 2..6), s in 0.01f64..100.0) {
            let ts: Vec<Vec3> = ts.into_iter().map(Vec3::from).collect();
            let scene = scene_with(&ts);
            let out = apply_scale(&scene, s);
            for i in 0..ts.len() {
                prop_assert_eq!(out.frames[i].pose.rotation, scene.frames[i].pose.rotation);
                for j in 0..ts.len() {
                    let before = (ts[i] - ts[j]).norm();
                    let after = (out.frames[i].pose.translation - out.frames[j].pose.translation).norm();
                    prop_assert!((after - s * before).abs() <= 1e-12 * (1.0 + s * before));
                }
            }
        }
    }
}
