//! Volumetric density fields and deterministic ray marching.
//!
//! Any type implementing [`DensityField`] can stand in for a trained radiance
//! field. Marching is jitter-free: sample `i` of a ray sits at
//! `t_near + i * step`, so identical inputs give bit-identical outputs.

mod analytic;
mod voxel;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Aabb, Vec3};
use crate::raster::{ColorImage, DepthMap, Raster};
use crate::scene::Frame;

pub use analytic::{AnalyticField, Primitive};
pub use voxel::VoxelGridField;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid field file {path}: {message}")]
    Format { path: String, message: String },
    #[error("invalid field: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub sigma: f64,
    pub rgb: Option<[f64; 3]>,
}

impl FieldSample {
    pub const EMPTY: FieldSample = FieldSample {
        sigma: 0.0,
        rgb: None,
    };
}

pub trait DensityField: Send + Sync {
    fn sample(&self, p: &Vec3) -> FieldSample;

    fn sigma(&self, p: &Vec3) -> f64 {
        self.sample(p).sigma
    }

    fn has_color(&self) -> bool {
        false
    }

    /// Region outside of which the density is known to be zero.
    fn bounds(&self) -> Option<Aabb> {
        None
    }
}

impl<F: DensityField + ?Sized> DensityField for Box<F> {
    fn sample(&self, p: &Vec3) -> FieldSample {
        (**self).sample(p)
    }
    fn has_color(&self) -> bool {
        (**self).has_color()
    }
    fn bounds(&self) -> Option<Aabb> {
        (**self).bounds()
    }
}

impl<F: DensityField + ?Sized> DensityField for std::sync::Arc<F> {
    fn sample(&self, p: &Vec3) -> FieldSample {
        (**self).sample(p)
    }
    fn has_color(&self) -> bool {
        (**self).has_color()
    }
    fn bounds(&self) -> Option<Aabb> {
        (**self).bounds()
    }
}

/// Field with no density anywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmptyField;

impl DensityField for EmptyField {
    fn sample(&self, _p: &Vec3) -> FieldSample {
        FieldSample::EMPTY
    }
    fn bounds(&self) -> Option<Aabb> {
        Some(Aabb::empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthMode {
    /// Terminate once accumulated transmittance drops below the cutoff.
    Transmittance,
    /// Terminate at the first sample whose density exceeds the threshold.
    SigmaThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayMarchConfig {
    pub step: f64,
    pub t_near: f64,
    pub t_far: f64,
    pub mode: DepthMode,
    pub termination_transmittance: f64,
    pub sigma_threshold: f64,
    pub background: [f32; 3],
}

impl RayMarchConfig {
    pub const DEFAULT_TERMINATION_TRANSMITTANCE: f64 = 0.5;
    pub const DEFAULT_SIGMA_THRESHOLD: f64 = 15.0;

    /// Defaults for a scene: step is the bounds diagonal / 1024 and rays reach
    /// twice the diagonal.
    pub fn for_bounds(aabb: &Aabb) -> Self {
        let diag = aabb.diagonal().max(1e-6);
        Self {
            step: diag / 1024.0,
            t_near: 0.0,
            t_far: 2.0 * diag,
            mode: DepthMode::Transmittance,
            termination_transmittance: Self::DEFAULT_TERMINATION_TRANSMITTANCE,
            sigma_threshold: Self::DEFAULT_SIGMA_THRESHOLD,
            background: [0.0, 0.0, 0.0],
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        if !(self.step > 0.0) {
            return Err(FieldError::Invalid(format!("step must be > 0, got {}", self.step)));
        }
        if !(self.t_near >= 0.0 && self.t_near < self.t_far) {
            return Err(FieldError::Invalid(format!(
                "need 0 <= t_near < t_far, got {} and {}",
                self.t_near, self.t_far
            )));
        }
        if !(self.termination_transmittance > 0.0 && self.termination_transmittance < 1.0) {
            return Err(FieldError::Invalid(
                "termination_transmittance must be in (0, 1)".into(),
            ));
        }
        if !(self.sigma_threshold >= 0.0) {
            return Err(FieldError::Invalid("sigma_threshold must be >= 0".into()));
        }
        Ok(())
    }

    fn sample_count(&self) -> usize {
        ((self.t_far - self.t_near) / self.step).floor() as usize + 1
    }
}

/// Index range of samples that can hit non-zero density, given field bounds.
fn sample_range(field: &dyn DensityField, origin: &Vec3, dir: &Vec3, cfg: &RayMarchConfig) -> std::ops::Range<usize> {
    let n = cfg.sample_count();
    let Some(b) = field.bounds() else {
        return 0..n;
    };
    if b.is_empty() {
        return 0..0;
    }
    let inv = Vec3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
    match b.ray_interval(origin, &inv) {
        None => 0..0,
        Some((t0, t1)) => {
            // one sample of slack on each side keeps this purely an optimization
            let lo = ((t0 - cfg.t_near) / cfg.step).floor() - 1.0;
            let hi = ((t1 - cfg.t_near) / cfg.step).ceil() + 2.0;
            let lo = lo.max(0.0) as usize;
            let hi = if hi < 0.0 { 0 } else { (hi as usize).min(n) };
            lo.min(hi)..hi
        }
    }
}

/// Ray parameter where the ray terminates, or `None` if it never does
/// before `t_far`. `dir` must be unit length.
pub fn ray_depth(field: &dyn DensityField, origin: &Vec3, dir: &Vec3, cfg: &RayMarchConfig) -> Option<f64> {
    debug_assert!((dir.norm() - 1.0).abs() < 1e-9, "direction must be unit");
    let mut transmittance = 1.0f64;
    for i in sample_range(field, origin, dir, cfg) {
        let t = cfg.t_near + i as f64 * cfg.step;
        if t > cfg.t_far {
            break;
        }
        let sigma = field.sigma(&(origin + dir * t));
        match cfg.mode {
            DepthMode::SigmaThreshold => {
                if sigma > cfg.sigma_threshold {
                    return Some(t);
                }
            }
            DepthMode::Transmittance => {
                transmittance *= (-sigma * cfg.step).exp();
                if transmittance < cfg.termination_transmittance {
                    return Some(t);
                }
            }
        }
    }
    None
}

/// Camera-frame z-depth of the field surface through pixel center `(x, y)`.
pub fn pixel_field_depth(field: &dyn DensityField, frame: &Frame, x: usize, y: usize, cfg: &RayMarchConfig) -> f64 {
    let (origin, d) = frame.pixel_center_ray(x, y);
    // |d| >= 1 and d has camera-z -1, so z-depth = t / |d|
    let len = d.norm();
    match ray_depth(field, &origin, &(d / len), cfg) {
        Some(t) => t / len,
        None => 0.0,
    }
}

/// Per-pixel z-depth (meters, 0 where no surface), parallel over rows.
pub fn render_field_depth(field: &dyn DensityField, frame: &Frame, cfg: &RayMarchConfig) -> DepthMap {
    let (w, h) = (frame.width(), frame.height());
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|y| (0..w).map(|x| pixel_field_depth(field, frame, x, y, cfg)).collect())
        .collect();
    Raster::from_vec(w, h, rows.concat())
}

fn shade_gray(t: f64, cfg: &RayMarchConfig) -> [f64; 3] {
    let frac = ((t - cfg.t_near) / (cfg.t_far - cfg.t_near)).clamp(0.0, 1.0);
    let g = 0.75 - 0.5 * frac;
    [g, g, g]
}

/// Front-to-back emission/absorption compositing along a unit ray.
pub fn composite_ray(field: &dyn DensityField, origin: &Vec3, dir: &Vec3, cfg: &RayMarchConfig) -> [f64; 3] {
    let colored = field.has_color();
    let mut acc = [0.0f64; 3];
    let mut transmittance = 1.0f64;
    for i in sample_range(field, origin, dir, cfg) {
        let t = cfg.t_near + i as f64 * cfg.step;
        if t > cfg.t_far || transmittance < 1e-4 {
            break;
        }
        let s = field.sample(&(origin + dir * t));
        if s.sigma <= 0.0 {
            continue;
        }
        let alpha = 1.0 - (-s.sigma * cfg.step).exp();
        let c = if colored {
            s.rgb.unwrap_or([0.0; 3])
        } else {
            shade_gray(t, cfg)
        };
        for k in 0..3 {
            acc[k] += transmittance * alpha * c[k];
        }
        transmittance *= 1.0 - alpha;
    }
    for k in 0..3 {
        acc[k] += transmittance * cfg.background[k] as f64;
    }
    acc
}

/// Color render. Fields without color are shaded mid-gray by depth.
pub fn render_field_rgb(field: &dyn DensityField, frame: &Frame, cfg: &RayMarchConfig) -> ColorImage {
    let (w, h) = (frame.width(), frame.height());
    let rows: Vec<Vec<[f32; 3]>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let (o, d) = frame.pixel_center_ray(x, y);
                    let c = composite_ray(field, &o, &d.normalize(), cfg);
                    [c[0] as f32, c[1] as f32, c[2] as f32]
                })
                .collect()
        })
        .collect();
    Raster::from_vec(w, h, rows.concat())
}

/// Loads a field by extension: `.vxl` voxel grid, `.json` analytic primitives.
pub fn load_field(path: &Path) -> Result<Box<dyn DensityField>, FieldError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => Ok(Box::new(AnalyticField::load(path)?)),
        Some("vxl") => Ok(Box::new(VoxelGridField::load(path)?)),
        _ => Err(FieldError::Format {
            path: path.display().to_string(),
            message: "expected a .vxl voxel grid or .json analytic field".into(),
        }),
    }
}
