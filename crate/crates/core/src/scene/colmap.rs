//! COLMAP text model (`cameras.txt` + `images.txt`).
//!
//! COLMAP stores world-to-camera poses with OpenCV axes (+Z forward, +Y down).
//! At load the pose is inverted and the camera Y/Z axes are flipped:
//! `R_c2w = R_w2c^T * diag(1, -1, -1)`, `t_c2w = -R_w2c^T * t_w2c`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion};

use super::{CameraIntrinsics, CameraPose, Frame, SceneDescription, SceneError, SceneLoad};
use crate::geometry::Vec3;

fn read(path: &Path) -> Result<String, SceneError> {
    std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> SceneError {
    SceneError::ParseLine {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(
    path: &Path,
    line: usize,
    field: &str,
    tok: Option<&str>,
) -> Result<T, SceneError> {
    let tok = tok.ok_or_else(|| parse_err(path, line, format!("missing field {field}")))?;
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("invalid {field} '{tok}'")))
}

fn parse_cameras(path: &Path) -> Result<BTreeMap<u32, CameraIntrinsics>, SceneError> {
    let text = read(path)?;
    let mut cameras = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let mut toks = raw.split_whitespace();
        let id: u32 = parse_num(path, line, "CAMERA_ID", toks.next())?;
        let model = toks
            .next()
            .ok_or_else(|| parse_err(path, line, "missing field MODEL"))?
            .to_string();
        let width: u32 = parse_num(path, line, "WIDTH", toks.next())?;
        let height: u32 = parse_num(path, line, "HEIGHT", toks.next())?;
        let params = toks
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| parse_err(path, line, format!("invalid parameter '{t}'")))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        let expect = |n: usize| -> Result<(), SceneError> {
            if params.len() != n {
                return Err(parse_err(
                    path,
                    line,
                    format!("{model} expects {n} parameters, got {}", params.len()),
                ));
            }
            Ok(())
        };
        let (fx, fy, cx, cy) = match model.as_str() {
            "SIMPLE_PINHOLE" => {
                expect(3)?;
                (params[0], params[0], params[1], params[2])
            }
            "PINHOLE" => {
                expect(4)?;
                (params[0], params[1], params[2], params[3])
            }
            "OPENCV" => {
                expect(8)?;
                if params[4..].iter().any(|k| *k != 0.0) {
                    return Err(SceneError::Distortion {
                        camera_id: id,
                        model,
                    });
                }
                (params[0], params[1], params[2], params[3])
            }
            other => {
                return Err(parse_err(
                    path,
                    line,
                    format!("unsupported camera model {other} (PINHOLE, SIMPLE_PINHOLE, OPENCV)"),
                ))
            }
        };
        if cameras
            .insert(
                id,
                CameraIntrinsics {
                    fx,
                    fy,
                    cx,
                    cy,
                    width,
                    height,
                },
            )
            .is_some()
        {
            return Err(parse_err(path, line, format!("duplicate camera id {id}")));
        }
    }
    Ok(cameras)
}

struct ImageRecord {
    name: String,
    camera_id: u32,
    pose: CameraPose,
    line: usize,
}

fn parse_images(path: &Path) -> Result<Vec<ImageRecord>, SceneError> {
    let text = read(path)?;
    let mut out = Vec::new();
    // header lines alternate with (possibly empty) POINTS2D lines
    let mut expect_header = true;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim_start().starts_with('#') {
            continue;
        }
        if !expect_header {
            expect_header = true;
            continue;
        }
        if raw.trim().is_empty() {
            continue;
        }
        expect_header = false;
        let mut toks = raw.split_whitespace();
        let _id: u32 = parse_num(path, line, "IMAGE_ID", toks.next())?;
        let mut q = [0.0f64; 4];
        for (k, name) in ["QW", "QX", "QY", "QZ"].iter().enumerate() {
            q[k] = parse_num(path, line, name, toks.next())?;
        }
        let mut t = [0.0f64; 3];
        for (k, name) in ["TX", "TY", "TZ"].iter().enumerate() {
            t[k] = parse_num(path, line, name, toks.next())?;
        }
        let camera_id: u32 = parse_num(path, line, "CAMERA_ID", toks.next())?;
        let name = toks
            .next()
            .ok_or_else(|| parse_err(path, line, "missing field NAME"))?
            .to_string();
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        if quat.norm() < 1e-12 {
            return Err(parse_err(path, line, "zero quaternion"));
        }
        let r_w2c = UnitQuaternion::new_normalize(quat)
            .to_rotation_matrix()
            .into_inner();
        let t_w2c = Vec3::from(t);
        let flip = Matrix3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0));
        out.push(ImageRecord {
            name,
            camera_id,
            pose: CameraPose {
                rotation: r_w2c.transpose() * flip,
                translation: -(r_w2c.transpose() * t_w2c),
            },
            line,
        });
    }
    Ok(out)
}

/// Loads a COLMAP text model. `path` is the model directory or its `images.txt`.
pub(super) fn load_colmap_text(path: &Path) -> Result<SceneLoad, SceneError> {
    let dir = if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let cameras = parse_cameras(&dir.join("cameras.txt"))?;
    let images_path = dir.join("images.txt");
    let mut images = parse_images(&images_path)?;
    let unknown: Vec<String> = images
        .iter()
        .filter(|im| !cameras.contains_key(&im.camera_id))
        .map(|im| format!("{} (line {}, camera {})", im.name, im.line, im.camera_id))
        .collect();
    if !unknown.is_empty() {
        return Err(SceneError::MissingImages(unknown));
    }
    images.sort_by(|a, b| a.name.cmp(&b.name));
    let frames = images
        .into_iter()
        .enumerate()
        .map(|(index, im)| Frame {
            index,
            image_path: im.name,
            intrinsics: cameras[&im.camera_id],
            pose: im.pose,
            sensor_depth_path: None,
        })
        .collect();
    let mut scene = SceneDescription::new(frames, None)?;
    scene.root = dir;
    Ok(SceneLoad {
        scene,
        warnings: Vec::new(),
    })
}
