use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DensityField, FieldError, FieldSample};
use crate::geometry::{Aabb, OrientedBox, Vec3};

/// Constant-density solid. Density is `sigma` inside (boundary included), 0 outside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Primitive {
    Sphere {
        center: Vec3,
        radius: f64,
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rgb: Option<[f64; 3]>,
    },
    Box {
        #[serde(rename = "box")]
        obb: OrientedBox,
        sigma: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rgb: Option<[f64; 3]>,
    },
}

impl Primitive {
    pub fn sigma(&self) -> f64 {
        match self {
            Primitive::Sphere { sigma, .. } | Primitive::Box { sigma, .. } => *sigma,
        }
    }

    pub fn rgb(&self) -> Option<[f64; 3]> {
        match self {
            Primitive::Sphere { rgb, .. } | Primitive::Box { rgb, .. } => *rgb,
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        match self {
            Primitive::Sphere { center, radius, .. } => (p - center).norm_squared() <= radius * radius,
            Primitive::Box { obb, .. } => obb.contains(p),
        }
    }

    pub fn bounds(&self) -> Aabb {
        match self {
            Primitive::Sphere { center, radius, .. } => {
                Aabb::new(center - Vec3::repeat(*radius), center + Vec3::repeat(*radius))
            }
            Primitive::Box { obb, .. } => Aabb::from_points(obb.corners().iter()),
        }
    }

    /// Exact ray parameter where a ray from `origin` first enters the solid
    /// (0 if the origin is already inside).
    pub fn entry(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        match self {
            Primitive::Sphere { center, radius, .. } => {
                let oc = origin - center;
                let a = dir.norm_squared();
                let b = oc.dot(dir);
                let c = oc.norm_squared() - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let (t0, t1) = ((-b - sq) / a, (-b + sq) / a);
                if t1 < 0.0 {
                    None
                } else {
                    Some(t0.max(0.0))
                }
            }
            Primitive::Box { obb, .. } => obb.ray_interval(origin, dir).map(|(t0, _)| t0),
        }
    }
}

/// Union of constant-density primitives; overlapping density is the max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticField {
    primitives: Vec<Primitive>,
}

impl AnalyticField {
    pub fn new(primitives: Vec<Primitive>) -> Result<Self, FieldError> {
        for (i, p) in primitives.iter().enumerate() {
            if !(p.sigma() >= 0.0) {
                return Err(FieldError::Invalid(format!("primitive {i}: sigma must be >= 0")));
            }
            if let Primitive::Sphere { radius, .. } = p {
                if !(*radius > 0.0) {
                    return Err(FieldError::Invalid(format!("primitive {i}: radius must be > 0")));
                }
            }
            if let Some(c) = p.rgb() {
                if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(FieldError::Invalid(format!("primitive {i}: rgb outside [0, 1]")));
                }
            }
        }
        Ok(Self { primitives })
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    pub fn load(path: &Path) -> Result<Self, FieldError> {
        let text = std::fs::read_to_string(path).map_err(|source| FieldError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let raw: AnalyticField = serde_json::from_str(&text).map_err(|e| FieldError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::new(raw.primitives)
    }

    pub fn save(&self, path: &Path) -> Result<(), FieldError> {
        std::fs::write(path, serde_json::to_string_pretty(self).expect("serializable")).map_err(
            |source| FieldError::Io {
                path: path.display().to_string(),
                source,
            },
        )
    }

    /// Exact parameter of the first surface with positive density along the ray.
    pub fn first_hit(&self, origin: &Vec3, dir: &Vec3) -> Option<f64> {
        self.primitives
            .iter()
            .filter(|p| p.sigma() > 0.0)
            .filter_map(|p| p.entry(origin, dir))
            .min_by(f64::total_cmp)
    }
}

impl DensityField for AnalyticField {
    fn sample(&self, p: &Vec3) -> FieldSample {
        let mut best: Option<&Primitive> = None;
        for prim in self.primitives.iter().filter(|prim| prim.contains(p)) {
            if best.is_none_or(|b| prim.sigma() > b.sigma()) {
                best = Some(prim);
            }
        }
        best.map_or(FieldSample::EMPTY, |b| FieldSample {
            sigma: b.sigma(),
            rgb: b.rgb(),
        })
    }

    fn has_color(&self) -> bool {
        self.primitives.iter().any(|p| p.rgb().is_some())
    }

    fn bounds(&self) -> Option<Aabb> {
        Some(
            self.primitives
                .iter()
                .map(Primitive::bounds)
                .fold(Aabb::empty(), |a, b| a.union(&b)),
        )
    }
}
