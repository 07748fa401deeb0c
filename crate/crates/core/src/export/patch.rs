//! Square training patches: horizontal crop, nearest-neighbor resize to
//! 512x512 and normalization to [-1, 1].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ExportError;
use crate::raster::{DepthMm, Raster};

pub const PATCH_SIZE: usize = 512;
pub const DEPTH_MIN_MM: f64 = 450.0;
pub const DEPTH_MAX_MM: f64 = 2000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum PatchMode {
    /// Centered crop, for evaluation.
    Center,
    /// Uniformly random horizontal offset, for training.
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPatch {
    /// First source column of the square crop.
    pub crop_offset: usize,
    pub rgb: Raster<[f32; 3]>,
    pub depth: Raster<f32>,
}

/// Clips to [450, 2000] mm and maps linearly onto [-1, 1].
pub fn normalize_depth(mm: f64) -> f64 {
    let d = mm.clamp(DEPTH_MIN_MM, DEPTH_MAX_MM);
    (d - DEPTH_MIN_MM) / (DEPTH_MAX_MM - DEPTH_MIN_MM) * 2.0 - 1.0
}

pub fn denormalize_depth(v: f64) -> f64 {
    (v + 1.0) / 2.0 * (DEPTH_MAX_MM - DEPTH_MIN_MM) + DEPTH_MIN_MM
}

fn normalize_channel(v: u8) -> f64 {
    v as f64 / 255.0 * 2.0 - 1.0
}

/// Source index along an axis of length `extent` for output index `dst`.
pub fn nearest_source_index(dst: usize, extent: usize) -> usize {
    dst * extent / PATCH_SIZE
}

/// Crops an `H x H` square (H = height), resizes it to 512x512 by nearest
/// neighbor and normalizes color from [0, 255] and depth from [450, 2000] mm.
pub fn prepare_training_patch(
    color: &Raster<[u8; 3]>,
    depth: &DepthMm,
    mode: PatchMode,
) -> Result<TrainingPatch, ExportError> {
    color.ensure_same_dims(depth)?;
    let (w, h) = color.dims();
    if w < h {
        return Err(ExportError::InvalidInput(format!("patch input must be at least as wide as tall, got {w}x{h}")));
    }
    if h == 0 {
        return Err(ExportError::InvalidInput("empty input".into()));
    }
    let crop_offset = match mode {
        PatchMode::Center => (w - h) / 2,
        PatchMode::Random { seed } => ChaCha8Rng::seed_from_u64(seed).gen_range(0..=w - h),
    };
    let src = |x: usize, y: usize| (crop_offset + nearest_source_index(x, h), nearest_source_index(y, h));
    let rgb = Raster::from_fn(PATCH_SIZE, PATCH_SIZE, |x, y| {
        let (sx, sy) = src(x, y);
        color.get(sx, sy).map(|c| normalize_channel(c) as f32)
    });
    let depth = Raster::from_fn(PATCH_SIZE, PATCH_SIZE, |x, y| {
        let (sx, sy) = src(x, y);
        normalize_depth(*depth.get(sx, sy) as f64) as f32
    });
    Ok(TrainingPatch { crop_offset, rgb, depth })
}
