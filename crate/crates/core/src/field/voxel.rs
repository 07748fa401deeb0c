//! Dense voxel grid field with trilinear interpolation.
//!
//! File layout (`.vxl`), all integers and floats little-endian:
//!
//! ```text
//! offset 0   4 bytes   magic "VXLF"
//! offset 4   u32       header length N
//! offset 8   N bytes   UTF-8 JSON header:
//!                      {"version":1,"resolution":[nx,ny,nz],
//!                       "aabb":{"min":[..],"max":[..]},"dtype":"float32","has_rgb":bool}
//! 8+N        nx*ny*nz f32 sigma values, x fastest, then y, then z
//! ...        optional nx*ny*nz*3 f32 rgb values, same node order, r g b interleaved
//! ```
//!
//! Values live on lattice nodes spanning the bounds inclusively: node `i` on
//! the x axis sits at `min.x + i * (max.x - min.x) / (nx - 1)`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DensityField, FieldError, FieldSample};
use crate::geometry::{Aabb, Vec3};

const MAGIC: &[u8; 4] = b"VXLF";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    resolution: [usize; 3],
    aabb: Aabb,
    dtype: String,
    has_rgb: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGridField {
    resolution: [usize; 3],
    aabb: Aabb,
    sigma: Vec<f32>,
    rgb: Option<Vec<[f32; 3]>>,
}

impl VoxelGridField {
    pub fn new(
        resolution: [usize; 3],
        aabb: Aabb,
        sigma: Vec<f32>,
        rgb: Option<Vec<[f32; 3]>>,
    ) -> Result<Self, FieldError> {
        if resolution.iter().any(|&n| n < 2) {
            return Err(FieldError::Invalid("each resolution axis needs >= 2 nodes".into()));
        }
        if (0..3).any(|i| !(aabb.max[i] > aabb.min[i])) {
            return Err(FieldError::Invalid("aabb must have positive extent".into()));
        }
        let n = resolution.iter().product::<usize>();
        if sigma.len() != n {
            return Err(FieldError::Invalid(format!("expected {n} sigma values, got {}", sigma.len())));
        }
        if let Some(bad) = sigma.iter().find(|s| !(**s >= 0.0)) {
            return Err(FieldError::Invalid(format!("sigma must be >= 0, found {bad}")));
        }
        if let Some(rgb) = &rgb {
            if rgb.len() != n {
                return Err(FieldError::Invalid(format!("expected {n} rgb values, got {}", rgb.len())));
            }
        }
        Ok(Self {
            resolution,
            aabb,
            sigma,
            rgb,
        })
    }

    /// Bakes another field onto a lattice.
    pub fn from_field(field: &dyn DensityField, aabb: Aabb, resolution: [usize; 3]) -> Result<Self, FieldError> {
        let with_rgb = field.has_color();
        let n = resolution.iter().product::<usize>();
        let mut sigma = Vec::with_capacity(n);
        let mut rgb = with_rgb.then(|| Vec::with_capacity(n));
        let cell = cell_size(&aabb, resolution);
        for k in 0..resolution[2] {
            for j in 0..resolution[1] {
                for i in 0..resolution[0] {
                    let p = aabb.min + Vec3::new(i as f64 * cell.x, j as f64 * cell.y, k as f64 * cell.z);
                    let s = field.sample(&p);
                    sigma.push(s.sigma as f32);
                    if let Some(rgb) = rgb.as_mut() {
                        let c = s.rgb.unwrap_or([0.0; 3]);
                        rgb.push([c[0] as f32, c[1] as f32, c[2] as f32]);
                    }
                }
            }
        }
        Self::new(resolution, aabb, sigma, rgb)
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn aabb(&self) -> &Aabb {
        &self.aabb
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.resolution[0] * (j + self.resolution[1] * k)
    }

    pub fn node_sigma(&self, i: usize, j: usize, k: usize) -> f32 {
        self.sigma[self.index(i, j, k)]
    }

    pub fn save(&self, path: &Path) -> Result<(), FieldError> {
        let io_err = |source| FieldError::Io {
            path: path.display().to_string(),
            source,
        };
        let header = serde_json::to_vec(&Header {
            version: 1,
            resolution: self.resolution,
            aabb: self.aabb,
            dtype: "float32".into(),
            has_rgb: self.rgb.is_some(),
        })
        .expect("serializable");
        let mut buf = Vec::with_capacity(8 + header.len() + self.sigma.len() * 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        for s in &self.sigma {
            buf.extend_from_slice(&s.to_le_bytes());
        }
        if let Some(rgb) = &self.rgb {
            for c in rgb {
                for v in c {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let mut f = std::fs::File::create(path).map_err(io_err)?;
        f.write_all(&buf).map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, FieldError> {
        let bytes = std::fs::read(path).map_err(|source| FieldError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let bad = |message: String| FieldError::Format {
            path: path.display().to_string(),
            message,
        };
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("missing VXLF magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| bad(format!("header: {e}")))?;
        if header.version != 1 {
            return Err(bad(format!("unsupported version {} (supported: 1)", header.version)));
        }
        if header.dtype != "float32" {
            return Err(bad(format!("unsupported dtype {}", header.dtype)));
        }
        let n: usize = header.resolution.iter().product();
        let floats = |start: usize, count: usize| -> Result<Vec<f32>, FieldError> {
            let raw = bytes
                .get(start..start + count * 4)
                .ok_or_else(|| bad("truncated data block".into()))?;
            Ok(raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect())
        };
        let start = 8 + hlen;
        let sigma = floats(start, n)?;
        let mut end = start + n * 4;
        let rgb = if header.has_rgb {
            let flat = floats(end, n * 3)?;
            end += n * 12;
            Some(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
        } else {
            None
        };
        if end != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - end)));
        }
        Self::new(header.resolution, header.aabb, sigma, rgb).map_err(|e| bad(e.to_string()))
    }
}

fn cell_size(aabb: &Aabb, res: [usize; 3]) -> Vec3 {
    let e = aabb.extent();
    Vec3::new(
        e.x / (res[0] - 1) as f64,
        e.y / (res[1] - 1) as f64,
        e.z / (res[2] - 1) as f64,
    )
}

impl DensityField for VoxelGridField {
    fn sample(&self, p: &Vec3) -> FieldSample {
        if !self.aabb.contains(p) {
            return FieldSample::EMPTY;
        }
        let cell = cell_size(&self.aabb, self.resolution);
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let g = (p[a] - self.aabb.min[a]) / cell[a];
            let i = (g.floor() as usize).min(self.resolution[a] - 2);
            base[a] = i;
            frac[a] = (g - i as f64).clamp(0.0, 1.0);
        }
        let mut sigma = 0.0f64;
        let mut rgb = [0.0f64; 3];
        for corner in 0..8 {
            let off = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
            let w: f64 = (0..3)
                .map(|a| if off[a] == 1 { frac[a] } else { 1.0 - frac[a] })
                .product();
            let idx = self.index(base[0] + off[0], base[1] + off[1], base[2] + off[2]);
            sigma += w * self.sigma[idx] as f64;
            if let Some(c) = &self.rgb {
                for k in 0..3 {
                    rgb[k] += w * c[idx][k] as f64;
                }
            }
        }
        FieldSample {
            sigma: sigma.max(0.0),
            rgb: self.rgb.as_ref().map(|_| rgb.map(|v| v.clamp(0.0, 1.0))),
        }
    }

    fn has_color(&self) -> bool {
        self.rgb.is_some()
    }

    fn bounds(&self) -> Option<Aabb> {
        Some(self.aabb)
    }
}
