//! Shrinks a box label to the geometry it contains, keeping its orientation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{LabelError, LabelProject, ObjectKind};
use crate::field::DensityField;
use crate::geometry::{OrientedBox, RigidTransform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TightFitConfig {
    pub sigma_threshold: f64,
    /// Margin added beyond the outermost occupied sample, in lattice cells.
    pub padding: f64,
    /// Samples per box axis.
    pub resolution: usize,
}

impl Default for TightFitConfig {
    fn default() -> Self {
        Self {
            sigma_threshold: 15.0,
            padding: 1.0,
            resolution: 128,
        }
    }
}

impl TightFitConfig {
    pub fn validate(&self) -> Result<(), LabelError> {
        if !(self.sigma_threshold > 0.0) {
            return Err(LabelError::InvalidConfig("sigma_threshold must be > 0".into()));
        }
        if !(self.padding >= 0.0) {
            return Err(LabelError::InvalidConfig("padding must be >= 0".into()));
        }
        if self.resolution < 2 {
            return Err(LabelError::InvalidConfig("resolution must be >= 2".into()));
        }
        Ok(())
    }
}

/// Minimal slab per box-frame axis around samples with density above the
/// threshold, padded and clipped to the original box.
pub fn tight_fit_obb(field: &dyn DensityField, obb: &OrientedBox, cfg: &TightFitConfig) -> Result<OrientedBox, LabelError> {
    cfg.validate()?;
    let n = cfg.resolution;
    let h = obb.half_extents;
    let cell = h * 2.0 / n as f64;
    let coord = |a: usize, i: usize| -h[a] + (i as f64 + 0.5) * cell[a];
    // per z-plane occupied index ranges, merged afterwards
    let ranges: Vec<Option<([usize; 3], [usize; 3])>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut lo = [usize::MAX; 3];
            let mut hi = [0usize; 3];
            let mut any = false;
            for j in 0..n {
                for i in 0..n {
                    let local = Vec3::new(coord(0, i), coord(1, j), coord(2, k));
                    if field.sigma(&obb.pose.apply(&local)) > cfg.sigma_threshold {
                        any = true;
                        for (a, idx) in [i, j, k].into_iter().enumerate() {
                            lo[a] = lo[a].min(idx);
                            hi[a] = hi[a].max(idx);
                        }
                    }
                }
            }
            any.then_some((lo, hi))
        })
        .collect();
    let (lo, hi) = ranges
        .into_iter()
        .flatten()
        .reduce(|(l1, h1), (l2, h2)| {
            (
                std::array::from_fn(|a| l1[a].min(l2[a])),
                std::array::from_fn(|a| h1[a].max(h2[a])),
            )
        })
        .ok_or(LabelError::NoGeometry)?;
    let mut min = Vec3::zeros();
    let mut max = Vec3::zeros();
    for a in 0..3 {
        min[a] = (coord(a, lo[a]) - cfg.padding * cell[a]).max(-h[a]);
        max[a] = (coord(a, hi[a]) + cfg.padding * cell[a]).min(h[a]);
    }
    let center = (min + max) * 0.5;
    let half = ((max - min) * 0.5).zip_map(&h, |v, limit| v.clamp(1e-12, limit));
    Ok(OrientedBox {
        pose: obb.pose.compose(&RigidTransform::from_translation(center)),
        half_extents: half,
    })
}

/// Tight fit of a box label in a project.
pub fn tight_fit_box(
    project: &LabelProject,
    id: u32,
    field: &dyn DensityField,
    cfg: &TightFitConfig,
) -> Result<OrientedBox, LabelError> {
    let object = project.object(id).ok_or(LabelError::UnknownObject(id))?;
    object.expect_kind(ObjectKind::Box)?;
    let obb = object.labeled_box().ok_or_else(|| LabelError::InvalidObject {
        id,
        message: "invalid half_extents".into(),
    })?;
    tight_fit_obb(field, &obb, cfg)
}
