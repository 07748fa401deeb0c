//! `transforms.json` style scenes (camera-to-world, OpenGL axes, 4x4 row-major).

use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{
    sanitize_rotation, CameraIntrinsics, CameraPose, Frame, SceneDescription, SceneError,
    SceneLoad,
};
use crate::geometry::{Aabb, Vec3};

#[derive(Debug, Default, Deserialize, Serialize)]
struct IntrinsicFields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fl_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    camera_angle_x: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
struct FrameRecord {
    #[serde(default)]
    file_path: Option<String>,
    transform_matrix: [[f64; 4]; 4],
    #[serde(
        default,
        alias = "depth_path",
        skip_serializing_if = "Option::is_none"
    )]
    depth_file_path: Option<String>,
    #[serde(flatten)]
    intrinsics: IntrinsicFields,
}

#[derive(Debug, Deserialize, Serialize)]
struct TransformsFile {
    #[serde(flatten)]
    intrinsics: IntrinsicFields,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    aabb: Option<[[f64; 3]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metric_scale: Option<f64>,
    frames: Vec<FrameRecord>,
}

fn resolve_intrinsics(
    global: &IntrinsicFields,
    local: &IntrinsicFields,
    frame: usize,
) -> Result<CameraIntrinsics, SceneError> {
    let pick = |l: Option<f64>, g: Option<f64>| l.or(g);
    let missing = |field: &str| SceneError::InvalidIntrinsics {
        frame,
        message: format!("missing field '{field}'"),
    };
    let w = pick(local.w, global.w).ok_or_else(|| missing("w"))?;
    let h = pick(local.h, global.h).ok_or_else(|| missing("h"))?;
    let angle = pick(local.camera_angle_x, global.camera_angle_x);
    let fx = match pick(local.fl_x, global.fl_x) {
        Some(f) => f,
        None => {
            let a = angle.ok_or_else(|| missing("fl_x"))?;
            0.5 * w / (0.5 * a).tan()
        }
    };
    let fy = pick(local.fl_y, global.fl_y).unwrap_or(fx);
    let cx = pick(local.cx, global.cx).unwrap_or(w / 2.0);
    let cy = pick(local.cy, global.cy).unwrap_or(h / 2.0);
    if w.fract() != 0.0 || h.fract() != 0.0 || w < 1.0 || h < 1.0 {
        return Err(SceneError::InvalidIntrinsics {
            frame,
            message: format!("image size {w}x{h} is not a positive integer size"),
        });
    }
    Ok(CameraIntrinsics {
        fx,
        fy,
        cx,
        cy,
        width: w as u32,
        height: h as u32,
    })
}

pub(super) fn load_transforms(path: &Path) -> Result<SceneLoad, SceneError> {
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: TransformsFile = serde_json::from_str(&text).map_err(|e| SceneError::ParseLine {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;

    let mut warnings = Vec::new();
    let mut frames = Vec::with_capacity(file.frames.len());
    let mut missing = Vec::new();
    for (index, rec) in file.frames.iter().enumerate() {
        let Some(image_path) = rec.file_path.clone().filter(|p| !p.is_empty()) else {
            missing.push(format!("frames[{index}]"));
            continue;
        };
        let m = &rec.transform_matrix;
        if m[3] != [0.0, 0.0, 0.0, 1.0] {
            return Err(SceneError::Parse {
                path: path.display().to_string(),
                message: format!("frames[{index}].transform_matrix: last row must be [0, 0, 0, 1]"),
            });
        }
        let rot = Matrix3::from_fn(|r, c| m[r][c]);
        let rotation = sanitize_rotation(rot, &format!("frames[{index}]"), &mut warnings);
        frames.push(Frame {
            index,
            image_path,
            intrinsics: resolve_intrinsics(&file.intrinsics, &rec.intrinsics, index)?,
            pose: CameraPose {
                rotation,
                translation: Vec3::new(m[0][3], m[1][3], m[2][3]),
            },
            sensor_depth_path: rec.depth_file_path.clone(),
        });
    }
    if !missing.is_empty() {
        return Err(SceneError::MissingImages(missing));
    }
    let aabb = file
        .aabb
        .map(|[lo, hi]| Aabb::new(Vec3::from(lo), Vec3::from(hi)));
    let mut scene = SceneDescription::new(frames, aabb)?;
    if let Some(s) = file.metric_scale {
        scene.scale = s;
    }
    scene.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(SceneLoad { scene, warnings })
}

/// Writes `scene` as a transforms file with per-frame intrinsics.
pub fn save_transforms(scene: &SceneDescription, path: &Path) -> Result<(), SceneError> {
    let frames = scene
        .frames
        .iter()
        .map(|f| {
            let r = &f.pose.rotation;
            let t = &f.pose.translation;
            let k = &f.intrinsics;
            FrameRecord {
                file_path: Some(f.image_path.clone()),
                transform_matrix: [
                    [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x],
                    [r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y],
                    [r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z],
                    [0.0, 0.0, 0.0, 1.0],
                ],
                depth_file_path: f.sensor_depth_path.clone(),
                intrinsics: IntrinsicFields {
                    fl_x: Some(k.fx),
                    fl_y: Some(k.fy),
                    cx: Some(k.cx),
                    cy: Some(k.cy),
                    w: Some(k.width as f64),
                    h: Some(k.height as f64),
                    camera_angle_x: None,
                },
            }
        })
        .collect();
    let file = TransformsFile {
        intrinsics: IntrinsicFields::default(),
        aabb: Some([scene.aabb.min.into(), scene.aabb.max.into()]),
        metric_scale: Some(scene.scale),
        frames,
    };
    let text = serde_json::to_string_pretty(&file).expect("serializable");
    std::fs::write(path, text).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })
}
