//! Preview images for the labeling UI.

use std::str::FromStr;

use fieldlabel_core::export::{export_frame, ExportConfig, Masks, OcclusionConfig, OcclusionMode, PreparedProject};
use fieldlabel_core::field::{render_field_depth, render_field_rgb};
use fieldlabel_core::geometry::Vec3;
use fieldlabel_core::labeling::{LabelObject, ObjectKind};
use fieldlabel_core::raster::{color_to_u8, encode_png_rgb, encode_png_u8, DepthMap, Raster};
use fieldlabel_core::scene::{project, Frame};
use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::session::Snapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderMode {
    #[default]
    Rgb,
    FieldDepth,
    Overlay,
}

impl FromStr for RenderMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "rgb" => Ok(Self::Rgb),
            "field_depth" => Ok(Self::FieldDepth),
            "overlay" => Ok(Self::Overlay),
            other => Err(format!("unknown render mode '{other}' (expected rgb, field_depth or overlay)")),
        }
    }
}

/// Grayscale depth: near is bright, missing is black.
pub fn depth_to_gray(depth: &DepthMap) -> Raster<u8> {
    let valid = depth.data().iter().copied().filter(|&d| d > 0.0);
    let (lo, hi) = valid.fold((f64::INFINITY, 0.0f64), |(lo, hi), d| (lo.min(d), hi.max(d)));
    let span = (hi - lo).max(1e-9);
    depth.map(|&d| if d > 0.0 { (255.0 - 200.0 * (d - lo) / span).round() as u8 } else { 0 })
}

/// Distinct, stable color per instance id.
pub fn instance_color(id: u32) -> [u8; 3] {
    let hue = (id as f64 * 0.618_033_988_75).fract() * 6.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    let (r, g, b) = match hue as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}

pub fn preview_masks(snap: &Snapshot, frame: &Frame, occlusion: OcclusionMode) -> Result<Masks, ServiceError> {
    let prepared = PreparedProject::new(&snap.project, &snap.meshes)?;
    let sensor = if occlusion == OcclusionMode::Sensor {
        fieldlabel_core::export::load_sensor_depth(&snap.scene, &full_frame(snap, frame))?
            .map(|d| resample_nearest(&d, frame.width(), frame.height()))
    } else {
        None
    };
    let cfg = ExportConfig {
        occlusion: OcclusionConfig {
            mode: occlusion,
            ..Default::default()
        },
        march: snap.options.march,
    };
    let fe = export_frame(&snap.project, &prepared, Some(&*snap.field), frame, sensor.as_ref(), &cfg)?;
    Ok(fe.masks)
}

fn full_frame(snap: &Snapshot, frame: &Frame) -> Frame {
    snap.scene.frames.get(frame.index).cloned().unwrap_or_else(|| frame.clone())
}

fn resample_nearest(src: &DepthMap, w: usize, h: usize) -> DepthMap {
    let (sw, sh) = src.dims();
    Raster::from_fn(w, h, |x, y| *src.get(x * sw / w, y * sh / h))
}

pub fn render_png(snap: &Snapshot, frame: &Frame, mode: RenderMode) -> Result<Vec<u8>, ServiceError> {
    let march = &snap.options.march;
    Ok(match mode {
        RenderMode::Rgb => encode_png_rgb(&color_to_u8(&render_field_rgb(&*snap.field, frame, march))),
        RenderMode::FieldDepth => encode_png_u8(&depth_to_gray(&render_field_depth(&*snap.field, frame, march))),
        RenderMode::Overlay => {
            let mut rgb = color_to_u8(&render_field_rgb(&*snap.field, frame, march));
            let masks = preview_masks(snap, frame, OcclusionMode::Field)?;
            for (px, &id) in rgb.data_mut().iter_mut().zip(masks.instance.data()) {
                if id > 0 {
                    let c = instance_color(id);
                    for k in 0..3 {
                        px[k] = ((px[k] as u16 + c[k] as u16) / 2) as u8;
                    }
                }
            }
            encode_png_rgb(&rgb)
        }
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectOverlay {
    pub id: u32,
    pub class_name: String,
    pub kind: ObjectKind,
    /// Box corners in pixel coordinates, corner order as in the annotation
    /// files; absent for corners behind the camera.
    pub corners: Vec<Option<[f64; 2]>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameOverlay {
    pub frame_index: usize,
    pub width: usize,
    pub height: usize,
    pub revision: u64,
    pub objects: Vec<ObjectOverlay>,
}

fn world_box_corners(snap: &Snapshot, o: &LabelObject) -> Option<[Vec3; 8]> {
    let obb = match o.kind {
        ObjectKind::Box => o.labeled_box(),
        ObjectKind::Mesh => snap.meshes.mesh_for(o).ok().and_then(|m| o.mesh_box(&m)),
    }?;
    Some(obb.corners())
}

/// Projected label boxes so clients can draw wireframes without their own camera model.
pub fn frame_overlay(snap: &Snapshot, frame: &Frame) -> FrameOverlay {
    let objects = snap
        .project
        .objects
        .iter()
        .map(|o| ObjectOverlay {
            id: o.id,
            class_name: o.class_name.clone(),
            kind: o.kind,
            corners: world_box_corners(snap, o)
                .map(|cs| cs.iter().map(|c| project(frame, c).map(|(u, v, _)| [u, v])).collect())
                .unwrap_or_default(),
        })
        .collect();
    FrameOverlay {
        frame_index: frame.index,
        width: frame.width(),
        height: frame.height(),
        revision: snap.revision,
        objects,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_gray_orders_near_brighter() {
        let d = Raster::from_vec(3, 1, vec![1.0, 2.0, 0.0]);
        let g = depth_to_gray(&d);
        assert_eq!(g.data(), &[255, 55, 0]);
    }

    #[test]
    fn instance_colors_differ() {
        let colors: std::collections::HashSet<[u8; 3]> = (1..20).map(instance_color).collect();
        assert_eq!(colors.len(), 19);
    }

    #[test]
    fn render_mode_parse() {
        assert_eq!("field_depth".parse::<RenderMode>(), Ok(RenderMode::FieldDepth));
        assert!("depth".parse::<RenderMode>().is_err());
    }
}
